#pragma once

// Experiment configuration, loaded from JSON. Every section is optional and
// falls back to the defaults below; unknown keys are rejected.
//
// {
//   "encoder":   {"image_size", "patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "shared_branches"},
//   "lora":      {"enabled", "rank", "alpha"},
//   "fusion":    {"mode": "patch"|"global", "heads", "scale", "zero_out_k"},
//   "pooling":   "attention"|"mean",
//   "heads":     {"vertices", "semantic_classes", "scene_classes", "contact_hidden", "vertex_dim", "semantic_hidden"},
//   "loss":      {"w_c", "w_pal", "w_s", "w_p", "w_sem", "use_phi", "beta", "epsilon",
//                 "target_mean": number|"dataset", "clip_max", "semantic_mask": "contact"|"all"},
//   "optimizer": {"kind": "sgd"|"adam", "learning_rate", "momentum", "grad_clip", "steps", "batch_size", "seed"},
//   "dataset":   {"source": "synthetic", "n", "holdout", "seed", "plan": {"default", "parts"}|{"rates"}}
//              | {"source": "directory", "path"},
//   "threshold": 0.5,
//   "checkpoint": "path"
// }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "contactlab/encoder.hpp"
#include "contactlab/fusion.hpp"
#include "contactlab/harness/synthetic.hpp"
#include "contactlab/heads.hpp"
#include "contactlab/losses.hpp"

namespace contactlab::harness {

enum class PoolingMode { attention, mean };
enum class SemanticMask { contact, all };

struct FusionConfig {
  fusion::FusionMode mode = fusion::FusionMode::patch;
  std::size_t heads = 1;
  std::optional<double> scale;
  /// Keep only the first K scene channels before cross-attention.
  std::optional<std::size_t> zero_out_k;
};

struct LossConfig {
  losses::LossWeights weights;
  double w_sem = 1.0;
  bool use_phi = true;
  losses::ClassBalanceOptions balance;
  /// Replace target_mean by the training split's negative/positive ratio.
  bool target_from_dataset = false;
  SemanticMask semantic_mask = SemanticMask::contact;
};

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.003;
  /// Momentum for SGD, first-moment decay for Adam.
  double momentum = 0.9;
  /// Rescales the gradient when its global L2 norm exceeds this value.
  std::optional<double> grad_clip;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  enum class Source { synthetic, directory };
  Source source = Source::synthetic;
  std::size_t n = 50;
  /// Extra synthetic samples held out for evaluation; 0 evaluates on the
  /// training samples.
  std::size_t holdout = 0;
  std::uint64_t seed = 0;
  PartPlan plan = PartPlan::desk_default();
  std::filesystem::path path;
};

struct ExperimentConfig {
  encoder::EncoderConfig encoder;
  encoder::LoraConfig lora;
  FusionConfig fusion;
  PoolingMode pooling = PoolingMode::attention;
  heads::HeadsConfig heads;
  LossConfig loss;
  OptimizerConfig optimizer;
  DatasetConfig dataset;
  double threshold = 0.5;
  std::optional<std::filesystem::path> checkpoint;

  void validate() const;
  /// Sets both the optimizer and the synthetic-data seed.
  void set_seed(std::uint64_t seed);
};

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

const char* pooling_name(PoolingMode m);
const char* fusion_mode_name(fusion::FusionMode m);

}  // namespace contactlab::harness
