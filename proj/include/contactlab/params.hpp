#pragma once

#include <map>
#include <string>
#include <vector>

#include "contactlab/ndcore.hpp"
#include "contactlab/rng.hpp"

namespace contactlab {

/// Names of low-rank adapter parameters start with this prefix.
inline constexpr const char* kLoraPrefix = "lora.";

/// Named trainable arrays, iterated in lexicographic name order.
class ParamStore {
 public:
  /// Registers a parameter; names must be unique.
  void add(const std::string& name, nd::DiffArray param);
  bool contains(const std::string& name) const { return params_.contains(name); }
  nd::DiffArray& get(const std::string& name);
  const nd::DiffArray& get(const std::string& name) const;

  const std::map<std::string, nd::DiffArray>& entries() const { return params_; }
  std::map<std::string, nd::DiffArray>& entries() { return params_; }

  /// Parameters whose requires_grad flag is set.
  std::vector<std::string> trainable_names() const;
  std::size_t value_count() const;
  void zero_grad();

  /// Deep copy of every value buffer, keyed by name.
  std::map<std::string, std::vector<double>> snapshot() const;

 private:
  std::map<std::string, nd::DiffArray> params_;
};

/// Dense layer weights, W stored [out×in].
struct LinearParams {
  nd::DiffArray weight;
  nd::DiffArray bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

struct LayerNormParams {
  nd::DiffArray gain;
  nd::DiffArray bias;
};

/// Weight ~ N(0, 1/fan_in), bias zero.
LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng);
LinearParams make_zero_linear(std::size_t in, std::size_t out);
LayerNormParams make_layer_norm(std::size_t dim);
nd::DiffArray make_gaussian(nd::Shape shape, double stddev, Rng& rng);

void register_linear(ParamStore& store, const std::string& prefix, const LinearParams& p);
void register_layer_norm(ParamStore& store, const std::string& prefix, const LayerNormParams& p);

inline nd::DiffArray apply(const LinearParams& p, const nd::DiffArray& x) {
  return nd::linear(x, p.weight, p.bias);
}
inline nd::DiffArray apply(const LayerNormParams& p, const nd::DiffArray& x) {
  return nd::layer_norm(x, p.gain, p.bias);
}

}  // namespace contactlab
