#include "contactlab/harness/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "contactlab/checkpoint.hpp"
#include "contactlab/errors.hpp"
#include "contactlab/harness/ablate.hpp"
#include "contactlab/harness/experiment.hpp"

namespace contactlab::harness {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "csv";
};

ExperimentConfig require_config(const GlobalOptions& g) {
  if (!g.config) throw ConfigError("this command needs --config PATH");
  auto cfg = load_config(*g.config);
  if (g.seed) cfg.set_seed(*g.seed);
  return cfg;
}

ExperimentConfig optional_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config ? load_config(*g.config) : ExperimentConfig{};
  if (g.seed) cfg.set_seed(*g.seed);
  return cfg;
}

fs::path out_dir(const GlobalOptions& g) {
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void flush_warnings(std::ostream& err) {
  std::set<std::string> seen;
  for (const auto& w : take_warnings())
    if (seen.insert(w).second) err << "warning: " << w << '\n';
}

void print_summary(std::ostream& out, const meshmetrics::ReportSummary& s) {
  using meshmetrics::format_number;
  out << "images " << s.images << "  precision " << format_number(s.binary.precision) << "  recall "
      << format_number(s.binary.recall) << "  f1 " << format_number(s.binary.f1) << "  geodesic_cm "
      << format_number(s.geodesic_cm) << "  semantic_precision " << format_number(s.semantic.precision)
      << "  semantic_recall " << format_number(s.semantic.recall) << "  semantic_f1 "
      << format_number(s.semantic.f1) << '\n';
}

int cmd_train(const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const auto cfg = require_config(g);
  const auto data = prepare_data(cfg);
  const auto dir = out_dir(g);
  ContactModel model(cfg);
  TrainOptions opts;
  opts.dump_dir = dir;
  const auto result = train(model, data.train, data.mesh, opts);
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  save_checkpoint(model.params(), dir / "checkpoint.json", CheckpointScope::all, {{"config", config_to_json(cfg)}});
  write_loss_curve(dir / "loss_curve.csv", result.curve);
  std::ofstream(dir / "config.json") << config_to_json(cfg).dump(2) << '\n';
  out << "trained " << result.curve.size() << " steps on " << data.train.size() << " samples";
  if (!result.curve.empty()) out << ", final loss " << meshmetrics::format_number(result.curve.back().total);
  out << '\n';
  return kExitOk;
}

int cmd_eval(const GlobalOptions& g, const std::optional<std::string>& checkpoint, std::ostream& out,
             std::ostream& err) {
  const auto cfg = require_config(g);
  const auto data = prepare_data(cfg);
  const auto dir = out_dir(g);
  ContactModel model(cfg);
  std::optional<fs::path> ckpt;
  if (checkpoint) ckpt = *checkpoint;
  else if (cfg.checkpoint) ckpt = *cfg.checkpoint;
  else if (fs::exists(dir / "checkpoint.json")) ckpt = dir / "checkpoint.json";
  if (ckpt) {
    load_checkpoint(model.params(), *ckpt);
  } else {
    err << "warning: no checkpoint given; evaluating the freshly initialised model\n";
  }
  const auto ev = evaluate(model, data.eval, data.mesh);
  if (g.format == "json") {
    meshmetrics::write_reports_json(dir / "report.json", ev.reports, ev.summary);
  } else {
    meshmetrics::write_reports_csv(dir / "report.csv", ev.reports, ev.summary);
  }
  write_predictions(dir / "predictions.jsonl", ev.predictions);
  print_summary(out, ev.summary);
  return kExitOk;
}

int cmd_analyze(const GlobalOptions& g, const std::optional<std::string>& data_dir, std::ostream& out) {
  MeshTopology mesh;
  std::vector<ContactLabels> labels;
  if (data_dir) {
    mesh = read_mesh(fs::path(*data_dir) / "mesh.json");
    labels = ingest_labels(fs::path(*data_dir) / "labels.jsonl", mesh);
  } else {
    const auto data = prepare_data(optional_config(g));
    mesh = data.mesh;
    for (const auto& s : data.train) labels.push_back(s.labels);
  }
  const auto report = meshmetrics::imbalance_report(labels, mesh);
  const auto dir = out_dir(g);
  meshmetrics::write_part_histogram_csv(dir / "part_histogram.csv", report);
  using meshmetrics::format_number;
  if (g.format == "json") {
    nlohmann::json parts = nlohmann::json::object();
    for (std::size_t k = 0; k < meshmetrics::kBodyParts; ++k)
      parts[meshmetrics::kPartNames[k]] = report.part_image_counts[k];
    nlohmann::json doc = {{"images", report.images},
                          {"contact_free_images", report.contact_free_images},
                          {"contact_free_fraction", report.contact_free_fraction},
                          {"positive_vertices", report.positive_vertices},
                          {"negative_vertices", report.negative_vertices},
                          {"negative_to_positive_ratio", report.negative_to_positive_ratio()},
                          {"part_image_counts", parts}};
    std::ofstream(dir / "imbalance.json") << doc.dump(2) << '\n';
  } else {
    std::ofstream f(dir / "imbalance.csv");
    f << "images,contact_free_images,contact_free_fraction,positive_vertices,negative_vertices,"
         "negative_to_positive_ratio\n"
      << report.images << ',' << report.contact_free_images << ',' << format_number(report.contact_free_fraction)
      << ',' << report.positive_vertices << ',' << report.negative_vertices << ','
      << format_number(report.negative_to_positive_ratio()) << '\n';
  }
  out << "images " << report.images << "  contact_free_fraction " << format_number(report.contact_free_fraction)
      << "  negative_to_positive " << format_number(report.negative_to_positive_ratio()) << '\n';
  for (std::size_t k = 0; k < meshmetrics::kBodyParts; ++k) {
    out << "  " << meshmetrics::kPartNames[k] << ' ' << report.part_image_counts[k] << '\n';
  }
  return kExitOk;
}

int cmd_ablate(const GlobalOptions& g, const std::string& axis_text, std::ostream& out) {
  const auto cfg = require_config(g);
  const auto axis = parse_axis(axis_text);
  const auto data = prepare_data(cfg);
  const auto table = ablate(cfg, axis, data);
  const auto dir = out_dir(g);
  const std::string stem = std::string("ablation_") + axis_name(axis);
  if (g.format == "json") {
    write_ablation_json(dir / (stem + ".json"), table);
  } else {
    write_ablation_csv(dir / (stem + ".csv"), table);
  }
  using meshmetrics::format_number;
  for (const auto& r : table.rows) {
    out << r.variant << "  f1 " << format_number(r.summary.binary.f1) << "  precision "
        << format_number(r.summary.binary.precision) << "  recall " << format_number(r.summary.binary.recall)
        << "  rare_recall " << format_number(r.rare.recall()) << '\n';
  }
  return kExitOk;
}

int cmd_gen_data(const GlobalOptions& g, std::optional<std::size_t> n, std::ostream& out) {
  auto cfg = optional_config(g);
  if (cfg.dataset.source != DatasetConfig::Source::synthetic) {
    throw ConfigError("gen-data needs a synthetic dataset section");
  }
  if (n) cfg.dataset.n = *n;
  cfg.dataset.holdout = 0;
  const auto data = prepare_data(cfg);
  write_dataset(out_dir(g), Dataset{data.mesh, data.train});
  out << "wrote " << data.train.size() << " samples to " << g.out << '\n';
  return kExitOk;
}

int cmd_geodesic(const GlobalOptions& g, const std::optional<std::string>& mesh_path,
                 const std::vector<std::size_t>& sources, std::ostream& out) {
  const MeshTopology mesh = mesh_path ? read_mesh(*mesh_path) : synthetic_mesh(optional_config(g).heads.vertices);
  const auto d = meshmetrics::geodesic_distances(mesh, sources);
  if (g.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : d) arr.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"));
    out << nlohmann::json{{"sources", sources}, {"distances_m", arr}}.dump() << '\n';
  } else {
    out << "vertex,distance_m\n";
    for (std::size_t i = 0; i < d.size(); ++i) out << i << ',' << meshmetrics::format_number(d[i]) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense contact prediction: training, evaluation and analysis", "contactlab"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "overrides the optimizer and dataset seeds");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--format", g.format, "report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint.json and loss_curve.csv");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint and write reports and predictions");
  std::optional<std::string> checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
  auto* analyze_cmd = app.add_subcommand("analyze", "per-part contact frequencies and contact-free fraction");
  std::optional<std::string> data_dir;
  analyze_cmd->add_option("--data", data_dir, "dataset directory (default: the config's dataset)");
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare variants along one axis");
  std::string axis;
  ablate_cmd->add_option("--axis", axis, "zero_out_K_sweep, lora_on_off, encoder_size, shared_vs_dual, "
                                         "pooling_mode, phi_on_off or fusion_mode")
      ->required();
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset directory");
  std::optional<std::size_t> n;
  gen_cmd->add_option("--n", n, "number of samples");
  auto* geo_cmd = app.add_subcommand("geodesic", "edge-graph distances from a set of source vertices");
  std::optional<std::string> mesh_path;
  std::vector<std::size_t> sources;
  geo_cmd->add_option("--mesh", mesh_path, "mesh JSON (default: the synthetic icosphere)");
  geo_cmd->add_option("--sources", sources, "source vertex ids")->delimiter(',')->required();
  for (auto* sub : {train_cmd, eval_cmd, analyze_cmd, ablate_cmd, gen_cmd, geo_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  int code = kExitOk;
  try {
    if (train_cmd->parsed()) code = cmd_train(g, out, err);
    else if (eval_cmd->parsed()) code = cmd_eval(g, checkpoint, out, err);
    else if (analyze_cmd->parsed()) code = cmd_analyze(g, data_dir, out);
    else if (ablate_cmd->parsed()) code = cmd_ablate(g, axis, out);
    else if (gen_cmd->parsed()) code = cmd_gen_data(g, n, out);
    else if (geo_cmd->parsed()) code = cmd_geodesic(g, mesh_path, sources, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    code = kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kExitData;
  }
  flush_warnings(err);
  return code;
}

}  // namespace contactlab::harness
