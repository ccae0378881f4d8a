#pragma once

#include <functional>
#include <string>
#include <vector>

#include "contactlab/ndcore.hpp"
#include "contactlab/rng.hpp"

namespace testsupport {

namespace nd = contactlab::nd;

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-5;

/// Relative error ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||) of a
/// scalar function's gradient with respect to `inputs`, using central
/// differences. `coords` > 0 checks that many randomly drawn coordinates
/// plus one random direction instead of every coordinate.
double gradient_error(const std::vector<nd::DiffArray>& inputs, const std::function<nd::DiffArray()>& f,
                      contactlab::Rng* rng = nullptr, std::size_t coords = 0, double h = kFdStep);

/// Leaf with requires_grad set and entries uniform in [lo, hi).
nd::DiffArray random_param(nd::Shape shape, contactlab::Rng& rng, double lo = -1.0, double hi = 1.0);
nd::DiffArray random_constant(nd::Shape shape, contactlab::Rng& rng, double lo = -1.0, double hi = 1.0);

/// Σ out ⊙ W with W fixed, turning any output into a scalar.
nd::DiffArray contract(const nd::DiffArray& out, const nd::DiffArray& weights);

struct GradCase {
  std::string name;
  /// Draws one random instance and returns its relative gradient error.
  std::function<double(contactlab::Rng&)> instance;
};

std::vector<GradCase> gradient_cases();

}  // namespace testsupport
