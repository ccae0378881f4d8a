#include "contactlab/params.hpp"

#include <cmath>

namespace contactlab {

void ParamStore::add(const std::string& name, nd::DiffArray param) {
  if (!param.defined()) throw Error("parameter '" + name + "' is undefined");
  auto [it, inserted] = params_.emplace(name, std::move(param));
  if (!inserted) throw Error("duplicate parameter name '" + name + "'");
}

nd::DiffArray& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

const nd::DiffArray& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_)
    if (p.requires_grad()) out.push_back(name);
  return out;
}

std::size_t ParamStore::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::map<std::string, std::vector<double>> ParamStore::snapshot() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.to_vector());
  return out;
}

nd::DiffArray make_gaussian(nd::Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(nd::shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return nd::DiffArray::parameter(std::move(shape), std::move(v));
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {make_gaussian({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
          nd::DiffArray::zeros({out}, true)};
}

LinearParams make_zero_linear(std::size_t in, std::size_t out) {
  return {nd::DiffArray::zeros({out, in}, true), nd::DiffArray::zeros({out}, true)};
}

LayerNormParams make_layer_norm(std::size_t dim) {
  return {nd::DiffArray::full({dim}, 1.0, true), nd::DiffArray::zeros({dim}, true)};
}

void register_linear(ParamStore& store, const std::string& prefix, const LinearParams& p) {
  store.add(prefix + ".weight", p.weight);
  store.add(prefix + ".bias", p.bias);
}

void register_layer_norm(ParamStore& store, const std::string& prefix, const LayerNormParams& p) {
  store.add(prefix + ".gain", p.gain);
  store.add(prefix + ".bias", p.bias);
}

}  // namespace contactlab
