#pragma once

// Synthetic contact data. Contact is planted per body part; the image shows
// one colored blob per contacting part, at a grid slot fixed by the part and
// colored by the semantic class.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "contactlab/losses.hpp"
#include "contactlab/meshmetrics.hpp"
#include "contactlab/rng.hpp"

namespace contactlab::harness {

using meshmetrics::ContactLabels;
using meshmetrics::MeshTopology;

/// Per-part probability that a sample has contact on that part.
struct PartPlan {
  std::array<double, meshmetrics::kBodyParts> rates{};

  static PartPlan uniform(double rate);
  /// Feet 0.8, hands 0.3, every other part 0.05.
  static PartPlan desk_default();
  void validate() const;
};

/// Part id for a name such as "left_foot"; ConfigError when unknown.
std::size_t part_index(const std::string& name);
/// Part ids behind a group name ("feet", "hands") or a single part name.
std::vector<std::size_t> part_group(const std::string& name);

/// Subdivided icosahedron on a sphere; `level` 3 gives 642 vertices.
MeshTopology icosphere(int level, double radius = 0.3);
/// Level whose icosphere has exactly `vertices` vertices, or ConfigError.
int icosphere_level(std::size_t vertices);
/// Nearest of 24 Fibonacci-sphere anchors.
std::vector<int> assign_parts(const MeshTopology& mesh);
/// icosphere + part assignment.
MeshTopology synthetic_mesh(std::size_t vertices);

struct Sample {
  std::string image_id;
  std::size_t image_size = 0;
  std::vector<double> image;  // [H×W×3], values k/255
  ContactLabels labels;
  bool has_annotations = false;
  std::vector<int> part_mask;   // per patch, 24 = background
  std::vector<int> scene_mask;  // per patch, 0 = none
  losses::Camera camera;
  losses::ContactMap2D gt_2d;
};

struct SyntheticOptions {
  std::size_t image_size = 56;
  std::size_t patch_size = 14;
  std::size_t semantic_classes = 4;
  std::size_t map_size = 16;  // gt_2d resolution
  double noise = 0.03;
};

/// Slot (cell row, cell col) of a part on the 8×8 cell grid.
std::pair<std::size_t, std::size_t> part_slot(std::size_t part);
/// RGB in [0,1] for semantic class c ≥ 1.
std::array<double, 3> class_color(int cls, std::size_t classes);

/// Sample i is drawn from the child stream rng.split(i), so the first k
/// samples do not depend on n.
std::vector<Sample> generate_synthetic(std::size_t n, const PartPlan& plan, const Rng& rng,
                                       const MeshTopology& mesh, const SyntheticOptions& opts = {});

}  // namespace contactlab::harness
