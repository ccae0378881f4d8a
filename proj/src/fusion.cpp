#include "contactlab/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "contactlab/rng.hpp"

namespace contactlab::fusion {

FeatureMap cross_attend(const FeatureMap& queries_from, const FeatureMap& keys_values_from,
                        const AttentionConfig& cfg) {
  if (queries_from.dim() != keys_values_from.dim()) {
    throw DimensionError("cross_attend: token dimensions differ (" +
                         std::to_string(queries_from.dim()) + " vs " +
                         std::to_string(keys_values_from.dim()) + ")");
  }
  if (cfg.heads == 0 || queries_from.dim() % cfg.heads != 0) {
    throw ConfigError("cross_attend: dimension " + std::to_string(queries_from.dim()) +
                      " not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  if (cfg.scale && !(*cfg.scale > 0.0)) throw ConfigError("cross_attend: C_t must be positive");

  nd::DiffArray q = queries_from.tokens;
  if (cfg.mode == FusionMode::global) {
    q = nd::reshape(nd::reduce(q, nd::ReduceKind::mean, 0), {1, queries_from.dim()});
  }
  const auto& kv = keys_values_from.tokens;
  return {nd::multi_head_attention(q, kv, kv, cfg.heads, cfg.scale), keys_values_from.branch};
}

FeatureMap fuse(const FeatureMap& f_s_att, const FeatureMap& f_p_att, const LayerNormParams& ln) {
  if (f_s_att.tokens.shape() != f_p_att.tokens.shape()) {
    throw DimensionError("fuse: attended maps differ in shape, " +
                         nd::shape_string(f_s_att.tokens.shape()) + " vs " +
                         nd::shape_string(f_p_att.tokens.shape()));
  }
  return {apply(ln, nd::hadamard(f_s_att.tokens, f_p_att.tokens)), Branch::contact};
}

nd::DiffArray attention_pool_weights(const FeatureMap& f, const PoolQuery& q) {
  if (!f.tokens.defined() || f.tokens.rank() != 2 || f.num_tokens() == 0) {
    throw DimensionError("attention_pool: empty token set");
  }
  if (q.q.size() != f.dim()) {
    throw DimensionError("attention_pool: query has " + std::to_string(q.q.size()) +
                         " entries for tokens of width " + std::to_string(f.dim()));
  }
  auto scores = nd::matmul(f.tokens, nd::reshape(q.q, {f.dim(), 1}));
  return nd::softmax_rows(nd::reshape(scores, {1, f.num_tokens()}));
}

nd::DiffArray attention_pool(const FeatureMap& f, const PoolQuery& q) {
  return nd::matmul(attention_pool_weights(f, q), f.tokens);
}

nd::DiffArray mean_pool(const FeatureMap& f) {
  if (!f.tokens.defined() || f.tokens.rank() != 2 || f.num_tokens() == 0) {
    throw DimensionError("mean_pool: empty token set");
  }
  return nd::reshape(nd::reduce(f.tokens, nd::ReduceKind::mean, 0), {1, f.dim()});
}

FeatureMap zero_out_channels(const FeatureMap& f, std::size_t keep,
                             std::optional<std::uint64_t> permutation_seed) {
  const std::size_t n = f.num_tokens(), c = f.dim();
  if (keep > c) {
    throw ConfigError("zero_out_channels: K=" + std::to_string(keep) + " exceeds " +
                      std::to_string(c) + " channels");
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  if (permutation_seed) {
    Rng rng(*permutation_seed);
    for (std::size_t i = c; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<double> channel_mask(c, 0.0);
  for (std::size_t i = 0; i < keep; ++i) channel_mask[order[i]] = 1.0;
  std::vector<double> mask(n * c);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(channel_mask.begin(), channel_mask.end(), mask.begin() + i * c);
  return {nd::hadamard(f.tokens, nd::DiffArray::constant({n, c}, std::move(mask))), f.branch};
}

}  // namespace contactlab::fusion
