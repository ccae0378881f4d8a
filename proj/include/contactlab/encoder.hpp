#pragma once

// Micro ViT patch encoders for the scene and part branches, with low-rank
// adapters on every projection.

#include <memory>
#include <string>
#include <vector>

#include "contactlab/ndcore.hpp"
#include "contactlab/params.hpp"
#include "contactlab/rng.hpp"

namespace contactlab::encoder {

struct EncoderConfig {
  std::size_t image_size = 56;
  std::size_t patch_size = 14;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  bool shared_branches = false;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
};

struct LoraConfig {
  bool enabled = true;
  std::size_t rank = 4;
  double alpha = 8.0;
  /// Stddev of the down-projection init; the up-projection starts at zero.
  double init_std = 0.02;
};

/// `contact` tags fused maps produced from both branches.
enum class Branch { scene, part, contact };
const char* branch_name(Branch b);

/// Patch tokens [N×D] produced by one branch.
struct FeatureMap {
  nd::DiffArray tokens;
  Branch branch = Branch::scene;

  std::size_t num_tokens() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
};

struct LoraAdapter {
  std::size_t rank = 0;
  double alpha = 1.0;
  nd::DiffArray down;  // A: [r×d_in]
  nd::DiffArray up;    // B: [d_out×r]
  bool enabled = true;

  static LoraAdapter create(std::size_t d_in, std::size_t d_out, const LoraConfig& cfg, Rng& rng);
  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t parameter_count() const { return down.size() + up.size(); }
};

/// Raster-ordered, non-overlapping patches of an [H×W×3] image, each
/// flattened as (row, col, channel).
nd::DiffArray patchify(const nd::DiffArray& image, const EncoderConfig& cfg);

/// y = x Wᵀ + b + (α/r) x Aᵀ Bᵀ when the adapter is enabled. The base weights
/// are detached from the graph while the adapter is enabled.
nd::DiffArray lora_linear(const nd::DiffArray& x, const nd::DiffArray& weight,
                          const nd::DiffArray& bias, const LoraAdapter& adapter);

struct AdaptedLinear {
  LinearParams base;
  LoraAdapter adapter;

  nd::DiffArray operator()(const nd::DiffArray& x) const {
    return lora_linear(x, base.weight, base.bias, adapter);
  }
};

struct EncoderBlock {
  LayerNormParams ln1, ln2;
  AdaptedLinear q, k, v, proj, fc1, fc2;
};

class PatchEncoder {
 public:
  PatchEncoder(const EncoderConfig& cfg, const LoraConfig& lora, Rng& base_rng, Rng& lora_rng);

  const EncoderConfig& config() const { return cfg_; }

  FeatureMap encode(const nd::DiffArray& image, Branch branch) const;

  /// Base weights go under `name.`, adapters under `lora.name.`.
  void register_params(ParamStore& store, const std::string& name) const;

  /// Toggles every adapter. Enabling freezes all base weights.
  void set_lora_enabled(bool enabled);
  bool lora_enabled() const { return lora_enabled_; }

  std::vector<AdaptedLinear*> projections();
  std::vector<const AdaptedLinear*> projections() const;
  AdaptedLinear& embedding() { return embed_; }
  nd::DiffArray& position() { return pos_; }
  std::vector<EncoderBlock>& blocks() { return blocks_; }

 private:
  EncoderConfig cfg_;
  AdaptedLinear embed_;
  nd::DiffArray pos_;
  std::vector<EncoderBlock> blocks_;
  bool lora_enabled_ = true;
};

/// Scene and part encoders, or one encoder serving both branches.
class BranchEncoders {
 public:
  BranchEncoders(const EncoderConfig& cfg, const LoraConfig& lora, Rng& base_rng, Rng& lora_rng);

  FeatureMap encode(const nd::DiffArray& image, Branch branch) const;
  void register_params(ParamStore& store) const;
  void set_lora_enabled(bool enabled);
  bool shared() const { return part_ == nullptr; }
  PatchEncoder& scene() { return *scene_; }
  PatchEncoder& part() { return part_ ? *part_ : *scene_; }

 private:
  std::unique_ptr<PatchEncoder> scene_;
  std::unique_ptr<PatchEncoder> part_;  // null when shared
};

}  // namespace contactlab::encoder
