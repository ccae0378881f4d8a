#pragma once

// Teacher-student self-distillation objectives at toy scale: image-level
// and masked-patch cross-entropies, teacher EMA, and teacher centering.

#include <map>
#include <string>
#include <vector>

#include "contactlab/ndcore.hpp"
#include "contactlab/params.hpp"

namespace contactlab::ssl {

inline constexpr double kStudentTemperature = 0.1;
inline constexpr double kTeacherTemperature = 0.04;
inline constexpr std::size_t kSinkhornIterations = 3;
inline constexpr double kLogFloor = 1e-12;

/// Student and teacher probability rows ([K] or [M×K]).
struct PrototypeScores {
  nd::DiffArray student;
  nd::DiffArray teacher;

  /// Rows must be nonnegative and sum to 1 within `tol`.
  void validate(double tol = 1e-9) const;
};

/// -Σ p_t log p_s. The teacher side is treated as a constant.
nd::DiffArray dino_loss(const nd::DiffArray& p_t, const nd::DiffArray& p_s);
inline nd::DiffArray dino_loss(const PrototypeScores& s) { return dino_loss(s.teacher, s.student); }

/// Σ over masked rows i of -Σ_k p_t[i,k] log p_s[i,k].
nd::DiffArray ibot_loss(const nd::DiffArray& p_t, const nd::DiffArray& p_s,
                        const std::vector<bool>& mask);

/// Entropy of a probability vector, for reference checks.
double entropy(std::span<const double> p);

struct TeacherState {
  std::map<std::string, std::vector<double>> params;
  std::map<std::string, nd::Shape> shapes;
  std::vector<double> center;
  double momentum = 0.996;
  double center_momentum = 0.9;

  /// Copies every student parameter; the center starts at zero.
  static TeacherState mirror(const ParamStore& student, std::size_t prototypes,
                             double momentum = 0.996, double center_momentum = 0.9);
  /// Writes the teacher values into a store with the same layout.
  void copy_into(ParamStore& store) const;
};

/// θ_t ← m θ_t + (1-m) θ_s for every mirrored parameter.
TeacherState& ema_update(TeacherState& teacher, const ParamStore& student, double m);

enum class CenterMode { moving_average, sinkhorn };

struct CenterOptions {
  double temperature = kTeacherTemperature;
  std::size_t sinkhorn_iterations = kSinkhornIterations;
};

/// Teacher probability rows from raw logits [B×K] (or [K]). Moving-average
/// mode subtracts the running center, softmaxes at the teacher temperature,
/// then updates the center with the batch mean. Sinkhorn mode alternates
/// column and row normalization of exp(logits/τ) and returns row-normalized
/// scores; the column step is skipped for a single row.
nd::DiffArray center(const nd::DiffArray& teacher_logits, TeacherState& state, CenterMode mode,
                     const CenterOptions& opts = {});

/// Sinkhorn-Knopp on a positive matrix [B×K]; exposed for tests.
std::vector<double> sinkhorn(std::vector<double> q, std::size_t rows, std::size_t cols,
                             std::size_t iterations);

}  // namespace contactlab::ssl
