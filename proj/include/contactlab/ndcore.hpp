#pragma once

// Dense double-precision arrays with reverse-mode gradients.
//
// Every op records its parents and a backward closure on the result node.
// Calling backward() on a scalar walks the recorded graph in reverse
// topological order and accumulates gradients into every node that
// requires them. Leaves keep their gradients until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contactlab/errors.hpp"

namespace contactlab::nd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class DiffArray {
 public:
  DiffArray() = default;

  static DiffArray constant(Shape shape, std::vector<double> values);
  static DiffArray parameter(Shape shape, std::vector<double> values);
  static DiffArray zeros(Shape shape, bool requires_grad = false);
  static DiffArray full(Shape shape, double value, bool requires_grad = false);
  static DiffArray scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;

  double item() const;
  double operator[](std::size_t flat) const { return values()[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient buffer; empty span if nothing has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;

  /// Seeds d(this)/d(this) = 1 and propagates. Requires a single element.
  void backward() const;

  /// Fresh leaf holding a copy of the values, cut from the graph.
  DiffArray detach() const;

  /// Identity of the underlying node (for parameter bookkeeping).
  const void* id() const { return node_.get(); }

  // Internal: op construction.
  static DiffArray from_node(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

enum class ElementwiseKind { hadamard, add, subtract };

enum class PointwiseKind { sigmoid, log, exp, negate, scale, shift, gelu, tanh, clamp };

struct Pointwise {
  PointwiseKind kind;
  double c = 0.0;   // scale factor, shift amount, or clamp lower bound
  double c2 = 0.0;  // clamp upper bound

  static Pointwise sigmoid() { return {PointwiseKind::sigmoid}; }
  static Pointwise log() { return {PointwiseKind::log}; }
  static Pointwise exp() { return {PointwiseKind::exp}; }
  static Pointwise negate() { return {PointwiseKind::negate}; }
  static Pointwise scale(double c) { return {PointwiseKind::scale, c}; }
  static Pointwise shift(double c) { return {PointwiseKind::shift, c}; }
  static Pointwise gelu() { return {PointwiseKind::gelu}; }
  static Pointwise tanh() { return {PointwiseKind::tanh}; }
  static Pointwise clamp(double lo, double hi) { return {PointwiseKind::clamp, lo, hi}; }
};

enum class ReduceKind { sum, mean };

DiffArray matmul(const DiffArray& a, const DiffArray& b);
DiffArray transpose(const DiffArray& a);

DiffArray elementwise(const DiffArray& a, const DiffArray& b, ElementwiseKind kind);
inline DiffArray hadamard(const DiffArray& a, const DiffArray& b) {
  return elementwise(a, b, ElementwiseKind::hadamard);
}
inline DiffArray add(const DiffArray& a, const DiffArray& b) {
  return elementwise(a, b, ElementwiseKind::add);
}
inline DiffArray subtract(const DiffArray& a, const DiffArray& b) {
  return elementwise(a, b, ElementwiseKind::subtract);
}

DiffArray pointwise(const DiffArray& x, Pointwise op);
inline DiffArray sigmoid(const DiffArray& x) { return pointwise(x, Pointwise::sigmoid()); }
inline DiffArray log(const DiffArray& x) { return pointwise(x, Pointwise::log()); }
inline DiffArray exp(const DiffArray& x) { return pointwise(x, Pointwise::exp()); }
inline DiffArray negate(const DiffArray& x) { return pointwise(x, Pointwise::negate()); }
inline DiffArray scale(const DiffArray& x, double c) { return pointwise(x, Pointwise::scale(c)); }
inline DiffArray shift(const DiffArray& x, double c) { return pointwise(x, Pointwise::shift(c)); }
inline DiffArray gelu(const DiffArray& x) { return pointwise(x, Pointwise::gelu()); }

/// Sum or mean over all elements (axis empty) or along one axis of a
/// rank-2 array; the reduced axis is dropped.
DiffArray reduce(const DiffArray& x, ReduceKind kind, std::optional<std::size_t> axis = {});
inline DiffArray sum(const DiffArray& x) { return reduce(x, ReduceKind::sum); }
inline DiffArray mean(const DiffArray& x) { return reduce(x, ReduceKind::mean); }

DiffArray softmax_rows(const DiffArray& x);
DiffArray log_softmax_rows(const DiffArray& x);

inline constexpr double kLayerNormEps = 1e-5;
DiffArray layer_norm(const DiffArray& x, const DiffArray& gain, const DiffArray& bias,
                     double eps = kLayerNormEps);

/// x[n×d] + bias[d] on every row.
DiffArray add_row(const DiffArray& x, const DiffArray& bias);
/// Repeats a single row ([d] or [1×d]) n times.
DiffArray broadcast_rows(const DiffArray& row, std::size_t n);

/// out[k] = x.flat[indices[k]], reshaped to `shape`.
DiffArray gather(const DiffArray& x, std::vector<std::size_t> indices, Shape shape);
DiffArray reshape(const DiffArray& x, Shape shape);
DiffArray slice_cols(const DiffArray& x, std::size_t begin, std::size_t end);
DiffArray concat_cols(const std::vector<DiffArray>& parts);

/// x Wᵀ + b, the usual dense layer with W stored [out×in].
DiffArray linear(const DiffArray& x, const DiffArray& weight, const DiffArray& bias);

/// softmax(Q Kᵀ / sqrt(c_t)) V for a single head.
DiffArray attention_logits(const DiffArray& q, const DiffArray& k, double c_t);
DiffArray attend(const DiffArray& logits, const DiffArray& v);

/// Splits the feature dimension into `heads` equal chunks, attends per chunk
/// with c_t = chunk width unless `c_t` is given, and concatenates.
DiffArray multi_head_attention(const DiffArray& q, const DiffArray& k, const DiffArray& v,
                               std::size_t heads, std::optional<double> c_t = {});

}  // namespace contactlab::nd
