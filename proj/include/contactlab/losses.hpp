#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "contactlab/heads.hpp"
#include "contactlab/ndcore.hpp"

namespace contactlab::losses {

inline constexpr double kDefaultBeta = 0.99;
inline constexpr double kDefaultEpsilon = 1e-8;
/// Mean positive weight after rescaling (DAMON negative-to-positive ratio).
inline constexpr double kDamonTargetMean = 6.451;
inline constexpr double kProbabilityClamp = 1e-12;

struct ClassBalanceOptions {
  double beta = kDefaultBeta;
  double epsilon = kDefaultEpsilon;
  double target_mean = kDamonTargetMean;
  /// Upper bound on final weights. Unset means 50 × target_mean;
  /// +infinity disables clipping.
  std::optional<double> clip_max;

  double resolved_clip() const { return clip_max.value_or(50.0 * target_mean); }
};

/// Per-vertex positive weights φ and the counts they came from.
struct ClassBalanceWeights {
  std::vector<std::size_t> counts;
  double beta = kDefaultBeta;
  double epsilon = kDefaultEpsilon;
  std::vector<double> phi_raw;
  std::vector<double> phi;
  double target_mean = kDamonTargetMean;
  double clip_max = 0.0;
  double scale = 1.0;  // multiplier applied to phi_raw before clipping
};

/// φ_raw,i = 1 / ((1 - β^n_i)/(1 - β) + ε).
double effective_weight(std::size_t count, double beta, double epsilon);

/// Raw weights, then a multiplicative rescale alternated with clipping until
/// mean(min(scale·φ_raw, clip)) is within 1e-6 of the target (≤ 100 rounds).
ClassBalanceWeights class_balance_weights(std::span<const std::size_t> counts,
                                          const ClassBalanceOptions& opts = {});

/// CSV with columns vertex_id,n_i,phi_raw,phi_final.
void write_weight_table(const std::filesystem::path& path, const ClassBalanceWeights& w);

/// -(1/V) Σ [φ_i y_i log p_i + (1 - y_i) log(1 - p_i)]. Probabilities are
/// clamped to [1e-12, 1 - 1e-12] with a warning when outside.
nd::DiffArray weighted_bce(const nd::DiffArray& p, std::span<const double> labels,
                           std::span<const double> phi);
/// Unit weights.
nd::DiffArray bce(const nd::DiffArray& p, std::span<const double> labels);

/// Mean cross-entropy over vertices with active_mask set.
nd::DiffArray semantic_ce(const nd::DiffArray& logits, std::span<const int> targets,
                          const std::vector<bool>& active_mask);

/// Mean per-patch cross-entropy.
nd::DiffArray seg_ce(const heads::SegmentationMap& map, std::span<const int> targets);

/// Weak-perspective camera: u = s·x + t_x, v = s·y + t_y (pixels).
struct Camera {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  void validate() const;
};

/// Binary 2D contact annotation, row-major [height×width].
struct ContactMap2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(std::size_t row, std::size_t col) const { return cells[row * width + col]; }
};

using Vec3 = std::array<double, 3>;

/// Pixel cell (row, col) nearest to each projected vertex, or nullopt when
/// the projection lands outside the map.
std::vector<std::optional<std::pair<std::size_t, std::size_t>>> project_vertices(
    std::span<const Vec3> vertices, const Camera& cam, std::size_t height, std::size_t width);

/// Splats per-vertex contact into its nearest cell with max-aggregation, then
/// averages BCE against the annotation over occupied cells.
nd::DiffArray pixel_anchor_loss(const nd::DiffArray& contact_prob, std::span<const Vec3> vertices,
                                const Camera& cam, const ContactMap2D& gt_2d);

/// Ground-truth 2D map obtained by splatting a vertex labelling.
ContactMap2D splat_labels(std::span<const double> labels, std::span<const Vec3> vertices,
                          const Camera& cam, std::size_t height, std::size_t width);

struct LossWeights {
  double w_c = 1.0;
  double w_pal = 0.5;
  double w_s = 0.1;
  double w_p = 0.1;

  void validate() const;
};

struct LossParts {
  nd::DiffArray contact;  // L_c^3D
  nd::DiffArray pal;      // L_pal^2D
  nd::DiffArray scene;    // L_s^2D
  nd::DiffArray part;     // L_p^2D
};

/// w_c L_c + w_pal L_pal + w_s L_s + w_p L_p.
nd::DiffArray composite_loss(const LossParts& parts, const LossWeights& w);

}  // namespace contactlab::losses
