#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "contactlab/harness/cli.hpp"

using namespace contactlab::harness;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "contactlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("contactlab_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

fs::path write_config(const fs::path& dir, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json doc = {
      {"encoder", {{"image_size", 24}, {"patch_size", 12}, {"embed_dim", 8}, {"depth", 1}, {"heads", 2}}},
      {"fusion", {{"heads", 2}}},
      {"heads", {{"vertices", 42}, {"semantic_classes", 3}, {"scene_classes", 3}, {"contact_hidden", 8}}},
      {"optimizer", {{"steps", 5}, {"batch_size", 2}}},
      {"dataset", {{"n", 4}}},
  };
  doc.merge_patch(extra);
  const auto path = dir / "config.json";
  std::ofstream(path) << doc.dump(2);
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  Scratch s("usage");
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--bogus"}).code == kExitUsage);
  CHECK(run({"train"}).code == kExitUsage);
  CHECK(run({"train", "--config", (s.dir / "missing.json").string()}).code == kExitUsage);
  CHECK(run({"ablate", "--config", write_config(s.dir).string()}).code == kExitUsage);
  CHECK(run({"ablate", "--config", write_config(s.dir).string(), "--axis", "depth"}).code == kExitUsage);
  CHECK(run({"eval", "--format", "xml"}).code == kExitUsage);
  const auto bad = run({"train", "--config", write_config(s.dir, {{"encoder", {{"patch_size", 5}}}}).string()});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("error:") != std::string::npos);
}

TEST_CASE("help exits with 0 and lists the subcommands") {
  const auto r = run({"--help"});
  CHECK(r.code == kExitOk);
  for (const char* sub : {"train", "eval", "analyze", "ablate", "gen-data", "geodesic"})
    CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("bad data exits with 2") {
  Scratch s("data");
  const auto missing = s.dir / "nowhere";
  CHECK(run({"analyze", "--data", missing.string()}).code == kExitData);

  REQUIRE(run({"gen-data", "--config", write_config(s.dir).string(), "--out", (s.dir / "ds").string()}).code == 0);
  std::ofstream(s.dir / "ds" / "labels.jsonl", std::ios::app) << "{\"image_id\": \"x\", \"positives\": [6890]}\n";
  const auto r = run({"analyze", "--data", (s.dir / "ds").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("labels.jsonl:5") != std::string::npos);
}

TEST_CASE("a non-finite loss exits with 3") {
  Scratch s("numeric");
  const auto cfg = write_config(s.dir, {{"optimizer", {{"learning_rate", 1e300}, {"kind", "sgd"}, {"steps", 4}}}});
  const auto r = run({"train", "--config", cfg.string(), "--out", s.dir.string()});
  CHECK(r.code == kExitNumeric);
  CHECK(fs::exists(s.dir / "nonfinite_batch.json"));
}

TEST_CASE("train then eval writes every artifact") {
  Scratch s("train_eval");
  const auto cfg = write_config(s.dir).string();
  const auto out = (s.dir / "run").string();
  const auto t = run({"train", "--config", cfg, "--out", out});
  REQUIRE(t.code == kExitOk);
  CHECK(t.out.find("trained 5 steps") != std::string::npos);
  for (const char* f : {"checkpoint.json", "loss_curve.csv", "config.json"}) CHECK(fs::exists(fs::path(out) / f));

  const auto e = run({"eval", "--config", cfg, "--out", out});
  REQUIRE(e.code == kExitOk);
  CHECK(e.err.find("no checkpoint") == std::string::npos);
  CHECK(fs::exists(fs::path(out) / "report.csv"));
  std::ifstream preds(fs::path(out) / "predictions.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(preds, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec["contact"].size() == 42);
    ++lines;
  }
  CHECK(lines == 4);

  const auto j = run({"eval", "--config", cfg, "--out", out, "--format", "json", "--checkpoint",
                      (fs::path(out) / "checkpoint.json").string()});
  REQUIRE(j.code == kExitOk);
  CHECK(nlohmann::json::parse(slurp(fs::path(out) / "report.json")).contains("summary"));

  const auto fresh = run({"eval", "--config", cfg, "--out", (s.dir / "fresh").string()});
  CHECK(fresh.code == kExitOk);
  CHECK(fresh.err.find("no checkpoint") != std::string::npos);
}

TEST_CASE("gen-data is byte-reproducible for a fixed seed") {
  Scratch s("gen");
  const auto a = s.dir / "a", b = s.dir / "b";
  REQUIRE(run({"gen-data", "--n", "100", "--seed", "7", "--out", a.string()}).code == kExitOk);
  REQUIRE(run({"gen-data", "--n", "100", "--seed", "7", "--out", b.string()}).code == kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    INFO(rel.string());
    CHECK(slurp(e.path()) == slurp(b / rel));
    ++files;
  }
  CHECK(files == 100 + 3);
  REQUIRE(run({"gen-data", "--n", "100", "--seed", "8", "--out", (s.dir / "c").string()}).code == kExitOk);
  CHECK(slurp(a / "labels.jsonl") != slurp(s.dir / "c" / "labels.jsonl"));
}

TEST_CASE("analyze and ablate write their tables") {
  Scratch s("analyze");
  const auto cfg = write_config(s.dir).string();
  const auto a = run({"analyze", "--config", cfg, "--out", s.dir.string()});
  REQUIRE(a.code == kExitOk);
  CHECK(fs::exists(s.dir / "part_histogram.csv"));
  CHECK(slurp(s.dir / "imbalance.csv").starts_with("images,contact_free_images"));
  REQUIRE(run({"analyze", "--config", cfg, "--out", s.dir.string(), "--format", "json"}).code == kExitOk);
  CHECK(nlohmann::json::parse(slurp(s.dir / "imbalance.json"))["images"] == 4);

  const auto r = run({"ablate", "--config", cfg, "--axis", "pooling_mode", "--out", s.dir.string()});
  REQUIRE(r.code == kExitOk);
  const auto table = slurp(s.dir / "ablation_pooling_mode.csv");
  CHECK(table.find("pooling_mode,attention,") != std::string::npos);
  CHECK(table.find("pooling_mode,mean,") != std::string::npos);
}

TEST_CASE("geodesic prints one distance per vertex") {
  const auto r = run({"geodesic", "--sources", "0,5"});
  REQUIRE(r.code == kExitOk);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "vertex,distance_m");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 642);
  CHECK(r.out.find("\n0,0\n") != std::string::npos);
  CHECK(r.out.find("\n5,0\n") != std::string::npos);
  CHECK(run({"geodesic"}).code == kExitUsage);
  CHECK(run({"geodesic", "--sources", "9999"}).code == kExitData);
}

TEST_CASE("the installed binary reports the same exit codes") {
  auto status = [](const std::string& args) {
    const int raw = std::system((std::string(CONTACTLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("--help") == kExitOk);
  CHECK(status("train") == kExitUsage);
  CHECK(status("analyze --data /nonexistent/contactlab") == kExitData);
}
