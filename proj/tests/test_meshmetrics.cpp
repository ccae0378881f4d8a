#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "contactlab/errors.hpp"
#include "contactlab/meshmetrics.hpp"
#include "oracles.hpp"

using namespace contactlab;
using namespace contactlab::meshmetrics;
using testsupport::count_by_hand;
using testsupport::random_connected_mesh;
using testsupport::random_labels;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A path 0 - 1 - 2 - 3 along x with 10 cm edges, plus a detached triangle 4,5,6.
MeshTopology path_mesh() {
  MeshTopology m;
  m.vertices = {{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {0.3, 0, 0}, {5, 0, 0}, {5, 1, 0}, {6, 0, 0}};
  m.faces = {{0, 1, 1}, {1, 2, 2}, {2, 3, 3}, {4, 5, 6}};
  m.part_id = {0, 0, 1, 1, 2, 2, 2};
  return m;
}

ContactLabels labels(std::vector<std::size_t> pos, std::map<std::size_t, int> sem = {}) {
  ContactLabels l;
  l.image_id = "x";
  l.positives = std::move(pos);
  l.semantic = std::move(sem);
  return l;
}

std::vector<double> probs_for(std::size_t v, std::initializer_list<std::size_t> on) {
  std::vector<double> p(v, 0.0);
  for (auto i : on) p[i] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("multi-source Dijkstra agrees with Floyd-Warshall") {
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    const std::size_t v = 3 + rng.below(40);
    const auto mesh = random_connected_mesh(v, rng);
    REQUIRE(mesh.connected());
    const auto all = testsupport::floyd_warshall(mesh);
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < v; ++i)
      if (rng.bernoulli(0.15)) src.push_back(i);
    if (src.empty()) src.push_back(rng.below(v));
    const auto d = geodesic_distances(mesh, src);
    for (std::size_t i = 0; i < v; ++i) {
      double best = kInf;
      for (auto s : src) best = std::min(best, all[s][i]);
      CHECK(std::abs(d[i] - best) <= 1e-9);
    }
  }
}

TEST_CASE("distances obey the triangle inequality over edges") {
  Rng rng(2);
  const auto mesh = random_connected_mesh(30, rng);
  const std::size_t src[] = {0};
  const auto d = geodesic_distances(mesh, src);
  for (const auto& [a, b] : mesh.edges()) {
    const auto& p = mesh.vertices[a];
    const auto& q = mesh.vertices[b];
    const double len = std::hypot(p[0] - q[0], p[1] - q[1], p[2] - q[2]);
    CHECK(d[b] <= d[a] + len + 1e-12);
    CHECK(d[a] <= d[b] + len + 1e-12);
  }
}

TEST_CASE("disconnected vertices are unreachable") {
  const auto m = path_mesh();
  CHECK_FALSE(m.connected());
  const std::size_t src[] = {0};
  const auto d = geodesic_distances(m, src);
  CHECK(d[3] == doctest::Approx(0.3));
  CHECK(d[5] == kInf);
  CHECK_THROWS_AS(geodesic_distances(m, std::span<const std::size_t>{}), DataError);
}

TEST_CASE("edges are unique and ordered") {
  const auto e = path_mesh().edges();
  CHECK(e == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}, {2, 3}, {4, 5}, {4, 6}, {5, 6}});
}

TEST_CASE("geodesic error by hand on the path mesh") {
  const auto m = path_mesh();
  const MeshGraph g(m);
  // predicted {1, 3}, truth {0}: distances 10 cm and 30 cm
  auto e = geodesic_error(probs_for(7, {1, 3}), labels({0}), g);
  CHECK(e.cm == doctest::Approx(20.0));
  CHECK(e.predicted == 2);
  CHECK(geodesic_error(probs_for(7, {0, 2}), labels({0, 2}), g).cm == 0.0);
  CHECK(geodesic_error(probs_for(7, {}), labels({0}), g).cm == 0.0);
  CHECK(geodesic_error(probs_for(7, {1}), labels({}), g).cm == kInf);
  take_warnings();
  e = geodesic_error(probs_for(7, {1, 5}), labels({0}), g);
  CHECK(e.unreachable == 1);
  CHECK(e.cm == doctest::Approx(10.0));
  CHECK_FALSE(take_warnings().empty());
  CHECK_THROWS_AS(geodesic_error(probs_for(6, {}), labels({0}), g), DataError);
}

TEST_CASE("binary and semantic counts match per-vertex tallies") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t v = 1 + rng.below(25);
    auto gt = random_labels(v, 4, rng);
    std::vector<double> prob(v);
    std::vector<int> cls(v);
    for (std::size_t i = 0; i < v; ++i) {
      prob[i] = rng.bernoulli(0.1) ? 0.5 : rng.uniform();
      cls[i] = int(rng.below(4));
    }
    const auto c = count_by_hand(prob, cls, gt, 0.5);
    const auto conf = confusion(prob, gt);
    CHECK(conf == Confusion{c.tp, c.fp, c.fn, c.tn});
    std::vector<bool> predicted(v);
    for (std::size_t i = 0; i < v; ++i) predicted[i] = prob[i] >= 0.5;
    CHECK(semantic_counts(cls, gt, predicted) == SemanticCounts{c.sem_tp, c.sem_fp, c.sem_fn});
  }
}

TEST_CASE("precision, recall and F1 follow their definitions") {
  const auto m = prf1(3, 1, 2);
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.6);
  CHECK(m.f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35));
  const auto z = prf1(0, 0, 0);
  CHECK((z.precision == 0.0 && z.recall == 0.0 && z.f1 == 0.0));
}

TEST_CASE("a 0.5 predictor at threshold 0.5 marks every vertex positive") {
  const auto gt = labels({1, 4});
  const std::vector<double> half(6, 0.5);
  const auto c = confusion(half, gt);
  CHECK(c.tp == 2);
  CHECK(c.fp == 4);
  CHECK(prf1(c).recall == 1.0);
}

TEST_CASE("ground truth as prediction scores perfectly") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto mesh = random_connected_mesh(3 + rng.below(30), rng);
    auto gt = random_labels(mesh.num_vertices(), 3, rng);
    if (gt.positives.empty()) gt.positives.push_back(0);
    const auto dense = gt.dense(mesh.num_vertices());
    const auto r = evaluate_image(dense, gt.dense_semantic(mesh.num_vertices()), gt, mesh, MeshGraph(mesh));
    CHECK(r.binary.f1 == 1.0);
    CHECK(r.geodesic.cm == 0.0);
    CHECK(r.semantic.recall == 1.0);
  }
}

TEST_CASE("summaries pool counts before computing ratios") {
  Rng rng(5);
  const auto mesh = random_connected_mesh(20, rng);
  const MeshGraph g(mesh);
  std::vector<MetricReport> reports;
  Confusion total;
  for (int i = 0; i < 10; ++i) {
    const auto gt = random_labels(20, 3, rng);
    std::vector<double> prob(20);
    std::vector<int> cls(20);
    for (std::size_t v = 0; v < 20; ++v) prob[v] = rng.uniform(), cls[v] = int(rng.below(3));
    reports.push_back(evaluate_image(prob, cls, gt, mesh, g));
    total += reports.back().confusion;
  }
  const auto s = summarize(reports);
  CHECK(s.confusion == total);
  const auto expect = prf1(total);
  CHECK(s.binary.f1 == expect.f1);
  CHECK(s.images == 10);
}

TEST_CASE("the geodesic mean skips images without ground-truth contact") {
  MetricReport a, b;
  a.geodesic.cm = 4.0;
  b.geodesic.cm = kInf;
  const MetricReport r[] = {a, b};
  const auto s = summarize(r);
  CHECK(s.geodesic_cm == 4.0);
  CHECK(s.geodesic_infinite_images == 1);
}

TEST_CASE("imbalance report agrees with a direct count") {
  Rng rng(6);
  const auto mesh = random_connected_mesh(40, rng);
  std::vector<ContactLabels> data;
  for (int i = 0; i < 30; ++i) data.push_back(random_labels(40, 2, rng, rng.bernoulli(0.3) ? 0.0 : 0.1));
  const auto r = imbalance_report(data, mesh);
  std::size_t free = 0, pos = 0;
  std::array<std::size_t, kBodyParts> parts{};
  for (const auto& l : data) {
    free += l.positives.empty();
    pos += l.positives.size();
    std::set<int> seen;
    for (auto v : l.positives) seen.insert(mesh.part_id[v]);
    for (int p : seen) ++parts[std::size_t(p)];
  }
  CHECK(r.images == 30);
  CHECK(r.contact_free_images == free);
  CHECK(r.contact_free_fraction == doctest::Approx(free / 30.0));
  CHECK(r.part_image_counts == parts);
  CHECK(r.positive_vertices == pos);
  CHECK(r.negative_vertices == 30 * 40 - pos);
}

TEST_CASE("label normalisation") {
  auto l = labels({3, 1, 3});
  l.normalize(4);
  CHECK(l.positives == std::vector<std::size_t>{1, 3});
  auto oob = labels({4});
  CHECK_THROWS_AS(oob.normalize(4), DataError);
  auto stray = labels({1}, {{2, 1}});
  CHECK_THROWS_AS(stray.normalize(4), DataError);
  auto neg = labels({1}, {{1, -1}});
  CHECK_THROWS_AS(neg.normalize(4), DataError);
  CHECK(labels({1}, {}).dense_semantic(3) == std::vector<int>{0, 0, 0});
}

TEST_CASE("mesh validation") {
  auto m = path_mesh();
  m.part_id[0] = 24;
  CHECK_THROWS_AS(m.validate(), DataError);
  m = path_mesh();
  m.faces.push_back({0, 1, 7});
  CHECK_THROWS_AS(m.validate(), DataError);
  m = path_mesh();
  m.part_id.pop_back();
  CHECK_THROWS_AS(MeshGraph{m}, DataError);
}

TEST_CASE("numbers print in shortest round-trip form") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(kInf) == "inf");
  CHECK(format_number(2.0) == "2");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("report files carry one row per image and a summary") {
  const auto m = path_mesh();
  const MeshGraph g(m);
  std::vector<MetricReport> reports;
  auto gt = labels({0, 1}, {{0, 1}});
  reports.push_back(evaluate_image(probs_for(7, {0, 2}), std::vector<int>(7, 1), gt, m, g));
  gt.image_id = "y";
  reports.push_back(evaluate_image(probs_for(7, {1}), std::vector<int>(7, 0), gt, m, g));
  const auto s = summarize(reports);
  const auto dir = std::filesystem::temp_directory_path();
  write_reports_csv(dir / "cl_report.csv", reports, s);
  std::ifstream in(dir / "cl_report.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].starts_with("image_id,tp,fp,fn,tn,precision,recall,f1,geodesic_error_cm"));
  CHECK(lines[1].starts_with("x,1,1,1,4,0.5,0.5,0.5,"));
  CHECK(lines[3].starts_with("__summary__,2,1,2,"));

  write_reports_json(dir / "cl_report.json", reports, s);
  const auto doc = nlohmann::json::parse(std::ifstream(dir / "cl_report.json"));
  CHECK(doc["images"].size() == 2);
  CHECK(doc["summary"]["images"] == 2);
  std::filesystem::remove(dir / "cl_report.csv");
  std::filesystem::remove(dir / "cl_report.json");
}
