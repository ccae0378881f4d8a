#include "contactlab/heads.hpp"

#include <algorithm>

namespace contactlab::heads {

void HeadsConfig::validate() const {
  if (vertices == 0) throw ConfigError("heads: vertex count must be positive");
  if (semantic_classes < 2) throw ConfigError("heads: need at least 2 semantic classes");
  if (scene_classes < 2) throw ConfigError("heads: need at least 2 scene classes");
  if (contact_hidden == 0 || vertex_dim == 0 || semantic_hidden == 0) {
    throw ConfigError("heads: hidden widths must be positive");
  }
}

std::vector<int> ContactPrediction::semantic_argmax() const {
  const std::size_t v = semantic_prob.dim(0), s = semantic_prob.dim(1);
  const auto p = semantic_prob.values();
  std::vector<int> out(v);
  for (std::size_t i = 0; i < v; ++i) {
    const double* row = p.data() + i * s;
    out[i] = static_cast<int>(std::max_element(row, row + s) - row);
  }
  return out;
}

ContactHeadParams make_contact_head(std::size_t dim, const HeadsConfig& cfg, Rng& rng) {
  return {make_linear(dim, cfg.contact_hidden, rng), make_linear(cfg.contact_hidden, cfg.vertices, rng)};
}

SemanticHeadParams make_semantic_head(const HeadsConfig& cfg, Rng& rng) {
  return {make_linear(cfg.vertex_dim, cfg.semantic_hidden, rng),
          make_linear(cfg.semantic_hidden, cfg.semantic_classes, rng)};
}

VertexExpandParams make_vertex_expand(std::size_t dim, const HeadsConfig& cfg, Rng& rng) {
  return {make_linear(dim, cfg.vertex_dim, rng), make_gaussian({cfg.vertices, cfg.vertex_dim}, 1.0, rng)};
}

LinearParams make_seg_decoder(std::size_t dim, SegKind kind, const HeadsConfig& cfg, Rng& rng) {
  return make_linear(dim, kind == SegKind::part ? kPartClasses : cfg.scene_classes, rng);
}

nd::DiffArray contact_head(const nd::DiffArray& pooled, const ContactHeadParams& params) {
  if (pooled.rank() != 2 || pooled.dim(0) != 1) {
    throw DimensionError("contact_head: expected a [1xD] pooled feature, got " +
                         nd::shape_string(pooled.shape()));
  }
  auto logits = apply(params.fc2, nd::gelu(apply(params.fc1, pooled)));
  return nd::reshape(nd::sigmoid(logits), {params.fc2.out_features()});
}

SemanticOutput semantic_head(const nd::DiffArray& per_vertex_features,
                             const SemanticHeadParams& params) {
  auto logits = apply(params.fc2, nd::gelu(apply(params.fc1, per_vertex_features)));
  return {logits, nd::softmax_rows(logits)};
}

SegmentationMap seg_decoder(const FeatureMap& f, SegKind kind, const LinearParams& params) {
  const bool match = (kind == SegKind::scene && f.branch == Branch::scene) ||
                     (kind == SegKind::part && f.branch == Branch::part);
  if (!match) {
    throw ConfigError(std::string("seg_decoder: ") + (kind == SegKind::part ? "part" : "scene") +
                      " decoder fed " + encoder::branch_name(f.branch) + " features");
  }
  if (kind == SegKind::part && params.out_features() != kPartClasses) {
    throw ConfigError("seg_decoder: part decoder must emit 25 classes");
  }
  return {apply(params, f.tokens), kind};
}

nd::DiffArray vertex_feature_expand(const nd::DiffArray& pooled, const VertexExpandParams& params) {
  const std::size_t v = params.table.dim(0);
  auto projected = apply(params.proj, nd::reshape(pooled, {1, pooled.size()}));
  return nd::add(nd::broadcast_rows(projected, v), params.table);
}

}  // namespace contactlab::heads
