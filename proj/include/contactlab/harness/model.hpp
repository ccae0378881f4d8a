#pragma once

// The full contact network: scene/part encoders, segmentation decoders,
// cross-attention fusion, pooling, and the contact and semantic heads.

#include <optional>

#include "contactlab/fusion.hpp"
#include "contactlab/harness/config.hpp"
#include "contactlab/heads.hpp"

namespace contactlab::harness {

struct ForwardOptions {
  /// Overrides the configured scene-channel zeroing.
  std::optional<std::size_t> zero_out_k;
};

struct ForwardOutput {
  encoder::FeatureMap f_s, f_p;
  heads::SegmentationMap scene_seg, part_seg;
  encoder::FeatureMap f_c;
  nd::DiffArray pooled;  // [1×D]
  heads::ContactPrediction prediction;
};

class ContactModel {
 public:
  /// Base weights come from stream 1 of the optimizer seed, adapters from
  /// stream 2, so toggling LoRA leaves the base initialisation unchanged.
  explicit ContactModel(const ExperimentConfig& cfg);

  ContactModel(const ContactModel&) = delete;
  ContactModel& operator=(const ContactModel&) = delete;

  const ExperimentConfig& config() const { return cfg_; }

  /// `image` is [H×W×3].
  ForwardOutput forward(const nd::DiffArray& image, const ForwardOptions& opts = {}) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  encoder::BranchEncoders& encoders() { return encoders_; }

 private:
  ExperimentConfig cfg_;
  Rng base_rng_, lora_rng_;
  encoder::BranchEncoders encoders_;
  LinearParams scene_decoder_, part_decoder_;
  LayerNormParams fuse_ln_;
  fusion::PoolQuery pool_query_;
  heads::ContactHeadParams contact_head_;
  heads::VertexExpandParams vertex_expand_;
  heads::SemanticHeadParams semantic_head_;
  ParamStore store_;
};

}  // namespace contactlab::harness
