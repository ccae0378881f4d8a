#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "contactlab/harness/experiment.hpp"

namespace contactlab::harness {

enum class AblationAxis {
  zero_out_k_sweep,
  lora_on_off,
  encoder_size,
  shared_vs_dual,
  pooling_mode,
  phi_on_off,
  fusion_mode,
};

AblationAxis parse_axis(const std::string& name);
const char* axis_name(AblationAxis axis);

struct AblationRow {
  std::string variant;
  meshmetrics::ReportSummary summary;
  GroupRecall rare;    // parts seen in at most 10% of training images
  GroupRecall common;  // parts seen in at least 50% of training images
  double final_loss = 0.0;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::phi_on_off;
  std::vector<AblationRow> rows;
};

/// Named configurations compared along `axis`. The zero-out sweep has a
/// single training configuration; its variants differ only at inference.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(const ExperimentConfig& cfg,
                                                                        AblationAxis axis);

/// Trains and evaluates every variant from the same seed. The zero-out
/// sweep trains once and evaluates K = C, C/2, ..., 1, 0 on the scene
/// channels, after an unablated row.
AblationTable ablate(const ExperimentConfig& cfg, AblationAxis axis, const PreparedData& data);

AblationRow summarize_variant(const std::string& name, const Evaluation& ev, const PreparedData& data,
                              double final_loss, double threshold);

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table);
void write_ablation_json(const std::filesystem::path& path, const AblationTable& table);

}  // namespace contactlab::harness
