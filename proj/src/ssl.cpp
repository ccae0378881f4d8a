#include "contactlab/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace contactlab::ssl {

namespace {

std::size_t row_width(const nd::DiffArray& a) { return a.rank() == 2 ? a.dim(1) : a.size(); }

nd::DiffArray as_rows(const nd::DiffArray& a) {
  if (a.rank() == 2) return a;
  return nd::reshape(a, {1, a.size()});
}

// log(max(p, floor)) with a warning when the floor is hit.
nd::DiffArray floored_log(const nd::DiffArray& p, const char* who) {
  for (double v : p.values()) {
    if (v < kLogFloor) {
      warn(std::string(who) + ": student probability below 1e-12 clamped before log");
      break;
    }
  }
  return nd::log(nd::pointwise(p, nd::Pointwise::clamp(kLogFloor, 1.0)));
}

void check_probability_rows(const nd::DiffArray& p, double tol, const char* who) {
  const std::size_t k = row_width(p);
  if (k == 0) throw DimensionError(std::string(who) + ": empty probability row");
  const auto v = p.values();
  for (std::size_t r = 0; r < v.size() / k; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double x = v[r * k + j];
      if (!(x >= 0.0 && x <= 1.0)) {
        throw NumericError(std::string(who) + ": entry outside [0,1] in row " + std::to_string(r));
      }
      s += x;
    }
    if (std::abs(s - 1.0) > tol) {
      throw NumericError(std::string(who) + ": row " + std::to_string(r) + " sums to " +
                         std::to_string(s));
    }
  }
}

}  // namespace

void PrototypeScores::validate(double tol) const {
  if (student.shape() != teacher.shape()) {
    throw DimensionError("prototype scores: student " + nd::shape_string(student.shape()) +
                         " vs teacher " + nd::shape_string(teacher.shape()));
  }
  check_probability_rows(student, tol, "student scores");
  check_probability_rows(teacher, tol, "teacher scores");
}

nd::DiffArray dino_loss(const nd::DiffArray& p_t, const nd::DiffArray& p_s) {
  PrototypeScores{p_s, p_t}.validate(1e-6);
  const auto target = p_t.detach();
  return nd::negate(nd::sum(nd::hadamard(target, floored_log(p_s, "dino_loss"))));
}

nd::DiffArray ibot_loss(const nd::DiffArray& p_t, const nd::DiffArray& p_s,
                        const std::vector<bool>& mask) {
  PrototypeScores{p_s, p_t}.validate(1e-6);
  const auto ps = as_rows(p_s);
  const std::size_t m = ps.dim(0), k = ps.dim(1);
  if (mask.size() != m) {
    throw DimensionError("ibot_loss: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(m) + " patches");
  }
  // Teacher rows outside the mask are zeroed, which drops those patches.
  auto weights = p_t.to_vector();
  std::size_t active = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (mask[i]) {
      ++active;
      continue;
    }
    std::fill(weights.begin() + i * k, weights.begin() + (i + 1) * k, 0.0);
  }
  if (active == 0) {
    warn("ibot_loss: no masked patches, loss defined as 0");
    return nd::scale(nd::sum(ps), 0.0);
  }
  const auto w = nd::DiffArray::constant({m, k}, std::move(weights));
  return nd::negate(nd::sum(nd::hadamard(w, floored_log(ps, "ibot_loss"))));
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

TeacherState TeacherState::mirror(const ParamStore& student, std::size_t prototypes,
                                  double momentum, double center_momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0) || !(center_momentum >= 0.0 && center_momentum < 1.0)) {
    throw ConfigError("teacher: momenta must lie in [0,1)");
  }
  TeacherState t;
  for (const auto& [name, p] : student.entries()) {
    t.params.emplace(name, p.to_vector());
    t.shapes.emplace(name, p.shape());
  }
  t.center.assign(prototypes, 0.0);
  t.momentum = momentum;
  t.center_momentum = center_momentum;
  return t;
}

void TeacherState::copy_into(ParamStore& store) const {
  for (auto& [name, p] : store.entries()) {
    auto it = params.find(name);
    if (it == params.end() || it->second.size() != p.size()) {
      throw DataError("teacher: no mirrored values for '" + name + "'");
    }
    std::copy(it->second.begin(), it->second.end(), p.mutable_values().begin());
  }
}

TeacherState& ema_update(TeacherState& teacher, const ParamStore& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("ema_update: momentum outside [0,1]");
  std::vector<std::string> bad;
  for (const auto& [name, values] : teacher.params) {
    if (!student.contains(name) || student.get(name).size() != values.size()) bad.push_back(name);
  }
  for (const auto& [name, p] : student.entries()) {
    if (!teacher.params.contains(name)) bad.push_back(name);
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "ema_update: teacher does not mirror student for";
    for (const auto& n : bad) os << ' ' << n;
    throw DataError(os.str());
  }
  for (auto& [name, values] : teacher.params) {
    const auto s = student.get(name).values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = m * values[i] + (1.0 - m) * s[i];
  }
  return teacher;
}

std::vector<double> sinkhorn(std::vector<double> q, std::size_t rows, std::size_t cols,
                             std::size_t iterations) {
  if (q.size() != rows * cols || rows == 0 || cols == 0) {
    throw DimensionError("sinkhorn: matrix size mismatch");
  }
  auto normalize_rows = [&](double target) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += q[i * cols + j];
      if (!(s > 0.0) || !std::isfinite(s)) throw NumericError("sinkhorn: zero row mass");
      for (std::size_t j = 0; j < cols; ++j) q[i * cols + j] *= target / s;
    }
  };
  auto normalize_cols = [&](double target) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i) s += q[i * cols + j];
      if (!(s > 0.0) || !std::isfinite(s)) throw NumericError("sinkhorn: zero column mass");
      for (std::size_t i = 0; i < rows; ++i) q[i * cols + j] *= target / s;
    }
  };
  double total = 0.0;
  for (double v : q) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("sinkhorn: all-zero matrix");
  for (double& v : q) v /= total;

  // Each prototype column gets mass 1/K, each sample row 1/B.
  for (std::size_t it = 0; it < iterations; ++it) {
    if (rows > 1) normalize_cols(1.0 / static_cast<double>(cols));
    normalize_rows(1.0 / static_cast<double>(rows));
  }
  normalize_rows(1.0);
  return q;
}

nd::DiffArray center(const nd::DiffArray& teacher_logits, TeacherState& state, CenterMode mode,
                     const CenterOptions& opts) {
  if (!(opts.temperature > 0.0)) throw ConfigError("center: temperature must be positive");
  const auto logits = as_rows(teacher_logits.detach());
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  const auto v = logits.values();
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("center: non-finite teacher logits");

  if (mode == CenterMode::moving_average) {
    if (state.center.size() != k) {
      throw DimensionError("center: state holds " + std::to_string(state.center.size()) +
                           " prototypes, logits have " + std::to_string(k));
    }
    std::vector<double> shifted(b * k);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < k; ++j)
        shifted[i * k + j] = (v[i * k + j] - state.center[j]) / opts.temperature;
    auto probs = nd::softmax_rows(nd::DiffArray::constant({b, k}, std::move(shifted)));
    for (std::size_t j = 0; j < k; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < b; ++i) mean += v[i * k + j];
      mean /= static_cast<double>(b);
      state.center[j] = state.center_momentum * state.center[j] + (1.0 - state.center_momentum) * mean;
    }
    return probs;
  }

  // Global max subtraction rescales the whole matrix, which normalization undoes.
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> q(b * k);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::exp((v[i] - mx) / opts.temperature);
  return nd::DiffArray::constant({b, k}, sinkhorn(std::move(q), b, k, opts.sinkhorn_iterations));
}

}  // namespace contactlab::ssl
