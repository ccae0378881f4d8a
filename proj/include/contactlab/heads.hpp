#pragma once

#include "contactlab/encoder.hpp"
#include "contactlab/params.hpp"

namespace contactlab::heads {

using encoder::Branch;
using encoder::FeatureMap;

/// 24 body parts plus background.
inline constexpr std::size_t kPartClasses = 25;
inline constexpr std::size_t kSmplVertices = 6890;
inline constexpr std::size_t kIcosphereVertices = 642;

struct HeadsConfig {
  std::size_t vertices = kIcosphereVertices;
  std::size_t semantic_classes = 4;  // class 0 = unlabeled/supporting
  std::size_t scene_classes = 4;
  std::size_t contact_hidden = 64;
  std::size_t vertex_dim = 16;
  std::size_t semantic_hidden = 32;

  void validate() const;
};

struct ContactPrediction {
  nd::DiffArray contact_prob;     // [V]
  nd::DiffArray semantic_logits;  // [V×S]
  nd::DiffArray semantic_prob;    // [V×S]

  /// Per-vertex argmax of the semantic distribution.
  std::vector<int> semantic_argmax() const;
};

enum class SegKind { scene, part };

struct SegmentationMap {
  nd::DiffArray logits;  // [N×C_seg]
  SegKind kind = SegKind::scene;

  std::size_t classes() const { return logits.dim(1); }
};

struct ContactHeadParams {
  LinearParams fc1;  // D -> hidden
  LinearParams fc2;  // hidden -> V
};

struct SemanticHeadParams {
  LinearParams fc1;  // D' -> hidden
  LinearParams fc2;  // hidden -> S
};

struct VertexExpandParams {
  LinearParams proj;    // D -> D'
  nd::DiffArray table;  // [V×D'] learned per-vertex embedding
};

ContactHeadParams make_contact_head(std::size_t dim, const HeadsConfig& cfg, Rng& rng);
SemanticHeadParams make_semantic_head(const HeadsConfig& cfg, Rng& rng);
VertexExpandParams make_vertex_expand(std::size_t dim, const HeadsConfig& cfg, Rng& rng);
LinearParams make_seg_decoder(std::size_t dim, SegKind kind, const HeadsConfig& cfg, Rng& rng);

/// sigmoid(fc2(gelu(fc1(pooled)))) as a [V] vector.
nd::DiffArray contact_head(const nd::DiffArray& pooled, const ContactHeadParams& params);

struct SemanticOutput {
  nd::DiffArray logits;
  nd::DiffArray probs;
};
SemanticOutput semantic_head(const nd::DiffArray& per_vertex_features, const SemanticHeadParams& params);

/// Per-patch linear classifier; the feature map must come from the
/// matching branch. Part maps always have 25 classes.
SegmentationMap seg_decoder(const FeatureMap& f, SegKind kind, const LinearParams& params);

/// One row per vertex: proj(pooled) broadcast over V, plus the table.
nd::DiffArray vertex_feature_expand(const nd::DiffArray& pooled, const VertexExpandParams& params);

}  // namespace contactlab::heads
