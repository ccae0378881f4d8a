#include "contactlab/ndcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace contactlab::nd {

using detail::Node;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Result node; parents and the backward closure are attached only when some
// parent needs a gradient.
std::shared_ptr<Node> make_result(Shape shape, std::vector<double> values,
                                  std::initializer_list<const DiffArray*> parents) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  for (const DiffArray* p : parents) {
    if (p->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const DiffArray* p : parents) node->parents.push_back(p->node());
  }
  return node;
}

void require(const DiffArray& a, const char* op) {
  if (!a.defined()) throw DimensionError(std::string(op) + ": undefined operand");
}

void require_rank2(const DiffArray& a, const char* op) {
  require(a, op);
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 operand, got " +
                         shape_string(a.shape()));
  }
}

void require_finite(const DiffArray& a, const char* op) {
  for (double v : a.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// DiffArray

DiffArray DiffArray::from_node(std::shared_ptr<Node> node) {
  DiffArray out;
  out.node_ = std::move(node);
  return out;
}

DiffArray DiffArray::constant(Shape shape, std::vector<double> values) {
  return from_node(make_leaf(std::move(shape), std::move(values), false));
}

DiffArray DiffArray::parameter(Shape shape, std::vector<double> values) {
  return from_node(make_leaf(std::move(shape), std::move(values), true));
}

DiffArray DiffArray::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

DiffArray DiffArray::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from_node(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

DiffArray DiffArray::scalar(double value) { return constant({}, {value}); }

const Shape& DiffArray::shape() const {
  if (!node_) throw DimensionError("undefined array");
  return node_->shape;
}

std::size_t DiffArray::size() const { return node_ ? node_->value.size() : 0; }

std::size_t DiffArray::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::span<const double> DiffArray::values() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> DiffArray::mutable_values() {
  if (!node_) return {};
  return node_->value;
}

std::vector<double> DiffArray::to_vector() const {
  auto v = values();
  return {v.begin(), v.end()};
}

double DiffArray::item() const {
  if (size() != 1) throw DimensionError("item() on array of shape " + shape_string(shape()));
  return node_->value[0];
}

double DiffArray::at(std::size_t row, std::size_t col) const {
  const Shape& s = shape();
  if (s.size() != 2 || row >= s[0] || col >= s[1]) {
    throw DimensionError("at(" + std::to_string(row) + "," + std::to_string(col) + ") on " +
                         shape_string(s));
  }
  return node_->value[row * s[1] + col];
}

bool DiffArray::requires_grad() const { return node_ && node_->requires_grad; }

void DiffArray::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

bool DiffArray::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> DiffArray::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void DiffArray::zero_grad() {
  if (node_) node_->grad.clear();
}

bool DiffArray::is_leaf() const { return node_ && !node_->backward; }

void DiffArray::backward() const {
  if (!node_ || node_->value.size() != 1) {
    throw DimensionError("backward() requires a single-element result");
  }
  if (!node_->requires_grad) return;

  // Post-order DFS gives a topological order; walk it backwards.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

DiffArray DiffArray::detach() const {
  require(*this, "detach");
  return constant(node_->shape, node_->value);
}

// ---------------------------------------------------------------------------
// Ops

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  auto node = make_result({m, n}, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      Node& an = *self.parents[0];
      Node& bn = *self.parents[1];
      const auto& g = self.grad;
      if (an.requires_grad) {
        auto& ga = an.ensure_grad();  // g · bᵀ
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* brow = bn.value.data() + p * n;
            const double* grow = g.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (bn.requires_grad) {
        auto& gb = bn.ensure_grad();  // aᵀ · g
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = an.value[i * k + p];
            double* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray transpose(const DiffArray& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto node = make_result({n, m}, std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [m, n](Node& self) {
      auto& ga = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray elementwise(const DiffArray& a, const DiffArray& b, ElementwiseKind kind) {
  require(a, "elementwise");
  require(b, "elementwise");
  if (a.shape() != b.shape()) {
    throw DimensionError("elementwise: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case ElementwiseKind::hadamard: out[i] = av[i] * bv[i]; break;
      case ElementwiseKind::add: out[i] = av[i] + bv[i]; break;
      case ElementwiseKind::subtract: out[i] = av[i] - bv[i]; break;
    }
  }
  auto node = make_result(a.shape(), std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [kind](Node& self) {
      Node& an = *self.parents[0];
      Node& bn = *self.parents[1];
      const auto& g = self.grad;
      if (an.requires_grad) {
        auto& ga = an.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += kind == ElementwiseKind::hadamard ? g[i] * bn.value[i] : g[i];
      }
      if (bn.requires_grad) {
        auto& gb = bn.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case ElementwiseKind::hadamard: gb[i] += g[i] * an.value[i]; break;
            case ElementwiseKind::add: gb[i] += g[i]; break;
            case ElementwiseKind::subtract: gb[i] -= g[i]; break;
          }
        }
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray pointwise(const DiffArray& x, Pointwise op) {
  require(x, "pointwise");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (op.kind) {
      case PointwiseKind::sigmoid: out[i] = sigmoid_scalar(v); break;
      case PointwiseKind::log:
        if (!(v > 0.0)) throw NumericError("log of nonpositive value " + std::to_string(v));
        out[i] = std::log(v);
        break;
      case PointwiseKind::exp: out[i] = std::exp(v); break;
      case PointwiseKind::negate: out[i] = -v; break;
      case PointwiseKind::scale: out[i] = op.c * v; break;
      case PointwiseKind::shift: out[i] = v + op.c; break;
      case PointwiseKind::gelu: out[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)); break;
      case PointwiseKind::tanh: out[i] = std::tanh(v); break;
      case PointwiseKind::clamp: out[i] = std::clamp(v, op.c, op.c2); break;
    }
  }
  auto node = make_result(x.shape(), std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [op](Node& self) {
      Node& xn = *self.parents[0];
      auto& gx = xn.ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double g = self.grad[i];
        const double v = xn.value[i];
        const double y = self.value[i];
        double d = 0.0;
        switch (op.kind) {
          case PointwiseKind::sigmoid: d = y * (1.0 - y); break;
          case PointwiseKind::log: d = 1.0 / v; break;
          case PointwiseKind::exp: d = y; break;
          case PointwiseKind::negate: d = -1.0; break;
          case PointwiseKind::scale: d = op.c; break;
          case PointwiseKind::shift: d = 1.0; break;
          case PointwiseKind::gelu:
            d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
            break;
          case PointwiseKind::tanh: d = 1.0 - y * y; break;
          case PointwiseKind::clamp: d = (v >= op.c && v <= op.c2) ? 1.0 : 0.0; break;
        }
        gx[i] += g * d;
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray reduce(const DiffArray& x, ReduceKind kind, std::optional<std::size_t> axis) {
  require(x, "reduce");
  const auto xv = x.values();
  if (!axis) {
    const double n = static_cast<double>(xv.size());
    // Neumaier compensated summation.
    double acc = 0.0, comp = 0.0;
    for (double v : xv) {
      const double t = acc + v;
      comp += std::abs(acc) >= std::abs(v) ? (acc - t) + v : (v - t) + acc;
      acc = t;
    }
    acc += comp;
    if (kind == ReduceKind::mean) {
      if (xv.empty()) throw DimensionError("reduce: mean of empty array");
      acc /= n;
    }
    auto node = make_result({}, {acc}, {&x});
    if (node->requires_grad) {
      node->backward = [kind, n](Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        const double g = kind == ReduceKind::mean ? self.grad[0] / n : self.grad[0];
        for (double& v : gx) v += g;
      };
    }
    return DiffArray::from_node(std::move(node));
  }

  if (x.rank() != 2 || *axis > 1) {
    throw DimensionError("reduce: axis " + std::to_string(*axis) + " invalid for " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t out_n = *axis == 0 ? cols : rows;
  const double count = static_cast<double>(*axis == 0 ? rows : cols);
  if (count == 0) throw DimensionError("reduce: mean over empty axis");
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[*axis == 0 ? j : i] += xv[i * cols + j];
  if (kind == ReduceKind::mean)
    for (double& v : out) v /= count;
  auto node = make_result({out_n}, std::move(out), {&x});
  if (node->requires_grad) {
    const std::size_t ax = *axis;
    node->backward = [kind, ax, rows, cols, count](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const double f = kind == ReduceKind::mean ? 1.0 / count : 1.0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += f * self.grad[ax == 0 ? j : i];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray softmax_rows(const DiffArray& x) {
  require_rank2(x, "softmax_rows");
  require_finite(x, "softmax_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * k;
    double* orow = out.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (orow[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) orow[j] /= z;
  }
  auto node = make_result({n, k}, std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [n, k](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = self.value.data() + i * k;
        const double* g = self.grad.data() + i * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray log_softmax_rows(const DiffArray& x) {
  require_rank2(x, "log_softmax_rows");
  require_finite(x, "log_softmax_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = row[j] - lse;
  }
  auto node = make_result({n, k}, std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [n, k](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* ls = self.value.data() + i * k;
        const double* g = self.grad.data() + i * k;
        double gsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) gsum += g[j];
        for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[j] - std::exp(ls[j]) * gsum;
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray layer_norm(const DiffArray& x, const DiffArray& gain, const DiffArray& bias,
                     double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (d == 0) throw DimensionError("layer_norm: zero-width rows");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match rows of " +
                         shape_string(x.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(n * d);
  // Normalized values and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  auto node = make_result({n, d}, std::move(out), {&x, &gain, &bias});
  if (node->requires_grad) {
    node->backward = [n, d, xhat, inv_std](Node& self) {
      Node& xn = *self.parents[0];
      Node& gn = *self.parents[1];
      Node& bn = *self.parents[2];
      const auto& g = self.grad;
      if (gn.requires_grad) {
        auto& gg = gn.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
      }
      if (bn.requires_grad) {
        auto& gb = bn.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
      if (xn.requires_grad) {
        auto& gx = xn.ensure_grad();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gn.value[j];
            sum_dh += dh;
            sum_dh_h += dh * (*xhat)[i * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gn.value[j];
            const double h = (*xhat)[i * d + j];
            gx[i * d + j] += (*inv_std)[i] * (dh - inv_d * sum_dh - h * inv_d * sum_dh_h);
          }
        }
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray add_row(const DiffArray& x, const DiffArray& bias) {
  require_rank2(x, "add_row");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.size() != d) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " vs rows of " +
                         shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto bv = bias.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  auto node = make_result({n, d}, std::move(out), {&x, &bias});
  if (node->requires_grad) {
    node->backward = [n, d](Node& self) {
      Node& xn = *self.parents[0];
      Node& bn = *self.parents[1];
      if (xn.requires_grad) {
        auto& gx = xn.ensure_grad();
        for (std::size_t i = 0; i < n * d; ++i) gx[i] += self.grad[i];
      }
      if (bn.requires_grad) {
        auto& gb = bn.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
      }
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray broadcast_rows(const DiffArray& row, std::size_t n) {
  require(row, "broadcast_rows");
  const bool ok = row.rank() == 1 || (row.rank() == 2 && row.dim(0) == 1);
  if (!ok) throw DimensionError("broadcast_rows: expected a single row, got " + shape_string(row.shape()));
  const std::size_t d = row.size();
  const auto rv = row.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy(rv.begin(), rv.end(), out.begin() + i * d);
  auto node = make_result({n, d}, std::move(out), {&row});
  if (node->requires_grad) {
    node->backward = [n, d](Node& self) {
      auto& gr = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gr[j] += self.grad[i * d + j];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray gather(const DiffArray& x, std::vector<std::size_t> indices, Shape shape) {
  require(x, "gather");
  if (shape_size(shape) != indices.size()) {
    throw DimensionError("gather: " + std::to_string(indices.size()) +
                         " indices cannot fill shape " + shape_string(shape));
  }
  const auto xv = x.values();
  std::vector<double> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= xv.size()) {
      throw DimensionError("gather: index " + std::to_string(indices[k]) + " out of range for " +
                           shape_string(x.shape()));
    }
    out[k] = xv[indices[k]];
  }
  auto node = make_result(std::move(shape), std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [idx = std::move(indices)](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t k = 0; k < idx.size(); ++k) gx[idx[k]] += self.grad[k];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray reshape(const DiffArray& x, Shape shape) {
  require(x, "reshape");
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  auto node = make_result(std::move(shape), x.to_vector(), {&x});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray slice_cols(const DiffArray& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (begin > end || end > d) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  const auto xv = x.values();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * d + begin + j];
  auto node = make_result({n, w}, std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [n, d, w, begin](Node& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * d + begin + j] += self.grad[i * w + j];
    };
  }
  return DiffArray::from_node(std::move(node));
}

DiffArray concat_cols(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t n = parts.front().dim(0);
  std::size_t d = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != n) throw DimensionError("concat_cols: row counts differ");
    d += p.dim(1);
  }
  std::vector<double> out(n * d);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.dim(1);
    const auto pv = p.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * d + off + j] = pv[i * w + j];
    off += w;
  }
  auto result = std::make_shared<Node>();
  result->shape = {n, d};
  result->value = std::move(out);
  for (const auto& p : parts)
    if (p.requires_grad()) result->requires_grad = true;
  if (result->requires_grad) {
    for (const auto& p : parts) result->parents.push_back(p.node());
    result->backward = [n, d, offsets](Node& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        Node& pn = *self.parents[k];
        if (!pn.requires_grad) continue;
        const std::size_t w = pn.shape[1];
        auto& gp = pn.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += self.grad[i * d + offsets[k] + j];
      }
    };
  }
  return DiffArray::from_node(std::move(result));
}

DiffArray linear(const DiffArray& x, const DiffArray& weight, const DiffArray& bias) {
  return add_row(matmul(x, transpose(weight)), bias);
}

DiffArray attention_logits(const DiffArray& q, const DiffArray& k, double c_t) {
  if (!(c_t > 0.0)) throw ConfigError("attention: scale C_t must be positive");
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query " + shape_string(q.shape()) + " and key " +
                         shape_string(k.shape()) + " disagree on token dimension");
  }
  return scale(matmul(q, transpose(k)), 1.0 / std::sqrt(c_t));
}

DiffArray attend(const DiffArray& logits, const DiffArray& v) {
  return matmul(softmax_rows(logits), v);
}

DiffArray multi_head_attention(const DiffArray& q, const DiffArray& k, const DiffArray& v,
                               std::size_t heads, std::optional<double> c_t) {
  if (heads == 0 || q.dim(1) % heads != 0) {
    throw ConfigError("attention: dimension " + std::to_string(q.dim(1)) +
                      " not divisible by head count " + std::to_string(heads));
  }
  if (k.dim(0) != v.dim(0)) throw DimensionError("attention: key/value token counts differ");
  const std::size_t width = q.dim(1) / heads;
  const double scale_ct = c_t.value_or(static_cast<double>(width));
  if (heads == 1) return attend(attention_logits(q, k, scale_ct), v);
  std::vector<DiffArray> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * width, e = b + width;
    outs.push_back(attend(attention_logits(slice_cols(q, b, e), slice_cols(k, b, e), scale_ct),
                          slice_cols(v, b, e)));
  }
  return concat_cols(outs);
}

}  // namespace contactlab::nd
