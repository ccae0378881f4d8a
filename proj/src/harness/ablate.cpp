#include "contactlab/harness/ablate.hpp"

#include <fstream>

#include "contactlab/errors.hpp"

namespace contactlab::harness {

using meshmetrics::format_number;

namespace {

constexpr std::pair<const char*, AblationAxis> kAxes[] = {
    {"zero_out_K_sweep", AblationAxis::zero_out_k_sweep}, {"lora_on_off", AblationAxis::lora_on_off},
    {"encoder_size", AblationAxis::encoder_size},         {"shared_vs_dual", AblationAxis::shared_vs_dual},
    {"pooling_mode", AblationAxis::pooling_mode},         {"phi_on_off", AblationAxis::phi_on_off},
    {"fusion_mode", AblationAxis::fusion_mode},
};

ExperimentConfig resized(const ExperimentConfig& cfg, std::size_t dim) {
  ExperimentConfig c = cfg;
  c.encoder.embed_dim = dim;
  while (c.encoder.heads > 1 && dim % c.encoder.heads != 0) --c.encoder.heads;
  while (c.fusion.heads > 1 && dim % c.fusion.heads != 0) --c.fusion.heads;
  if (c.fusion.zero_out_k) c.fusion.zero_out_k = std::min(*c.fusion.zero_out_k, dim);
  c.lora.rank = std::min(c.lora.rank, dim);
  return c;
}

std::vector<std::size_t> common_parts(const meshmetrics::ImbalanceReport& report) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < meshmetrics::kBodyParts; ++k)
    if (report.part_frequency(k) >= 0.5) out.push_back(k);
  return out;
}

}  // namespace

AblationAxis parse_axis(const std::string& name) {
  std::string names;
  for (const auto& [n, a] : kAxes) {
    if (name == n) return a;
    names += (names.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("unknown ablation axis '" + name + "' (expected one of " + names + ")");
}

const char* axis_name(AblationAxis axis) {
  for (const auto& [n, a] : kAxes)
    if (a == axis) return n;
  return "?";
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(const ExperimentConfig& cfg,
                                                                        AblationAxis axis) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto with = [&](const std::string& name, auto&& edit) {
    ExperimentConfig c = cfg;
    edit(c);
    c.validate();
    out.emplace_back(name, std::move(c));
  };
  switch (axis) {
    case AblationAxis::zero_out_k_sweep:
      with("trained", [](ExperimentConfig& c) { c.fusion.zero_out_k.reset(); });
      break;
    case AblationAxis::lora_on_off:
      with("lora", [](ExperimentConfig& c) { c.lora.enabled = true; });
      with("full_finetune", [](ExperimentConfig& c) { c.lora.enabled = false; });
      break;
    case AblationAxis::encoder_size: {
      const std::size_t d = cfg.encoder.embed_dim;
      if (d / 2 >= 2) out.emplace_back("dim_" + std::to_string(d / 2), resized(cfg, d / 2));
      out.emplace_back("dim_" + std::to_string(d), cfg);
      out.emplace_back("dim_" + std::to_string(2 * d), resized(cfg, 2 * d));
      for (auto& [name, c] : out) c.validate();
      break;
    }
    case AblationAxis::shared_vs_dual:
      with("dual", [](ExperimentConfig& c) { c.encoder.shared_branches = false; });
      with("shared", [](ExperimentConfig& c) { c.encoder.shared_branches = true; });
      break;
    case AblationAxis::pooling_mode:
      with("attention", [](ExperimentConfig& c) { c.pooling = PoolingMode::attention; });
      with("mean", [](ExperimentConfig& c) { c.pooling = PoolingMode::mean; });
      break;
    case AblationAxis::phi_on_off:
      with("phi", [](ExperimentConfig& c) { c.loss.use_phi = true; });
      with("no_phi", [](ExperimentConfig& c) { c.loss.use_phi = false; });
      break;
    case AblationAxis::fusion_mode:
      with("patch", [](ExperimentConfig& c) { c.fusion.mode = fusion::FusionMode::patch; });
      with("global", [](ExperimentConfig& c) { c.fusion.mode = fusion::FusionMode::global; });
      break;
  }
  return out;
}

AblationRow summarize_variant(const std::string& name, const Evaluation& ev, const PreparedData& data,
                              double final_loss, double threshold) {
  std::vector<ContactLabels> labels;
  for (const auto& s : data.train) labels.push_back(s.labels);
  const auto report = meshmetrics::imbalance_report(labels, data.mesh);
  AblationRow row;
  row.variant = name;
  row.summary = ev.summary;
  row.rare = group_recall(ev.predictions, data.eval, data.mesh, rare_parts(report), threshold);
  row.common = group_recall(ev.predictions, data.eval, data.mesh, common_parts(report), threshold);
  row.final_loss = final_loss;
  return row;
}

AblationTable ablate(const ExperimentConfig& cfg, AblationAxis axis, const PreparedData& data) {
  AblationTable table;
  table.axis = axis;
  for (const auto& [name, c] : ablation_variants(cfg, axis)) {
    ContactModel model(c);
    const auto tr = train(model, data.train, data.mesh);
    const double loss = tr.curve.empty() ? 0.0 : tr.curve.back().total;
    if (axis != AblationAxis::zero_out_k_sweep) {
      table.rows.push_back(summarize_variant(name, evaluate(model, data.eval, data.mesh), data, loss, c.threshold));
      continue;
    }
    table.rows.push_back(summarize_variant("none", evaluate(model, data.eval, data.mesh), data, loss, c.threshold));
    std::vector<std::size_t> ks;
    for (std::size_t k = c.encoder.embed_dim; k > 0; k /= 2) ks.push_back(k);
    ks.push_back(0);
    for (std::size_t k : ks) {
      ForwardOptions opts;
      opts.zero_out_k = k;
      table.rows.push_back(
          summarize_variant("K=" + std::to_string(k), evaluate(model, data.eval, data.mesh, opts), data, loss,
                            c.threshold));
    }
  }
  return table;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "axis,variant,precision,recall,f1,geodesic_error_cm,semantic_precision,semantic_recall,semantic_f1,"
         "rare_part_recall,common_part_recall,final_loss\n";
  for (const auto& r : table.rows) {
    const auto& s = r.summary;
    out << axis_name(table.axis) << ',' << r.variant << ',' << format_number(s.binary.precision) << ','
        << format_number(s.binary.recall) << ',' << format_number(s.binary.f1) << ','
        << format_number(s.geodesic_cm) << ',' << format_number(s.semantic.precision) << ','
        << format_number(s.semantic.recall) << ',' << format_number(s.semantic.f1) << ','
        << format_number(r.rare.recall()) << ',' << format_number(r.common.recall()) << ','
        << format_number(r.final_loss) << '\n';
  }
}

void write_ablation_json(const std::filesystem::path& path, const AblationTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    const auto& s = r.summary;
    rows.push_back({{"variant", r.variant},
                    {"precision", s.binary.precision},
                    {"recall", s.binary.recall},
                    {"f1", s.binary.f1},
                    {"geodesic_error_cm", s.geodesic_cm},
                    {"semantic_precision", s.semantic.precision},
                    {"semantic_recall", s.semantic.recall},
                    {"semantic_f1", s.semantic.f1},
                    {"rare_part_recall", r.rare.recall()},
                    {"common_part_recall", r.common.recall()},
                    {"final_loss", r.final_loss}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json{{"axis", axis_name(table.axis)}, {"rows", std::move(rows)}}.dump(2) << '\n';
}

}  // namespace contactlab::harness
