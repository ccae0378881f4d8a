#pragma once

// Contact-branch fusion: cross-attention between the scene and part token
// sets (globally pooled or patch-level), Hadamard + LayerNorm fusion,
// learned-query attention pooling, and the channel-zeroing probe.

#include <cstdint>
#include <optional>

#include "contactlab/encoder.hpp"
#include "contactlab/params.hpp"

namespace contactlab::fusion {

using encoder::Branch;
using encoder::FeatureMap;

enum class FusionMode { global, patch };

struct AttentionConfig {
  /// Scaling factor C_t; defaults to the per-head token width.
  std::optional<double> scale;
  std::size_t heads = 1;
  FusionMode mode = FusionMode::patch;
};

/// Learned pooling query q ∈ R^D.
struct PoolQuery {
  nd::DiffArray q;

  static PoolQuery zeros(std::size_t dim) { return {nd::DiffArray::zeros({dim}, true)}; }
};

/// Queries from `queries_from`, keys and values from `keys_values_from`.
/// Global mode mean-pools the query map to a single token first.
/// The result carries the key/value branch tag.
FeatureMap cross_attend(const FeatureMap& queries_from, const FeatureMap& keys_values_from,
                        const AttentionConfig& cfg);

/// LN(F'_s ⊙ F'_p), per token.
FeatureMap fuse(const FeatureMap& f_s_att, const FeatureMap& f_p_att, const LayerNormParams& ln);

/// Softmax weights α over the N tokens of F for query q.
nd::DiffArray attention_pool_weights(const FeatureMap& f, const PoolQuery& q);
/// Σ α_i F_i as a [1×D] row.
nd::DiffArray attention_pool(const FeatureMap& f, const PoolQuery& q);
/// Plain token mean as a [1×D] row (pooling ablation).
nd::DiffArray mean_pool(const FeatureMap& f);

/// Keeps K channels of every token and zeroes the rest. Without a seed the
/// trailing C-K channels are zeroed; with a seed the kept channels are a
/// seeded random subset.
FeatureMap zero_out_channels(const FeatureMap& f, std::size_t keep,
                             std::optional<std::uint64_t> permutation_seed = {});

}  // namespace contactlab::fusion
