#include "contactlab/checkpoint.hpp"

#include <fstream>

namespace contactlab {

bool in_scope(const std::string& name, CheckpointScope scope) {
  const bool is_lora = name.rfind(kLoraPrefix, 0) == 0;
  switch (scope) {
    case CheckpointScope::all: return true;
    case CheckpointScope::base: return !is_lora;
    case CheckpointScope::lora: return is_lora;
  }
  return false;
}

nlohmann::json checkpoint_to_json(const ParamStore& store, CheckpointScope scope,
                                  const nlohmann::json& metadata) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : store.entries()) {
    if (!in_scope(name, scope)) continue;
    params[name] = {{"shape", p.shape()}, {"values", p.to_vector()}};
  }
  return {{"format", "contactlab-checkpoint"},
          {"version", 1},
          {"metadata", metadata},
          {"parameters", std::move(params)}};
}

void load_checkpoint_json(ParamStore& store, const nlohmann::json& doc, CheckpointScope scope) {
  if (!doc.is_object() || !doc.contains("parameters") || !doc["parameters"].is_object()) {
    throw DataError("checkpoint: missing 'parameters' object");
  }
  const auto& params = doc["parameters"];
  for (auto& [name, p] : store.entries()) {
    if (!in_scope(name, scope)) continue;
    if (!params.contains(name)) throw DataError("checkpoint: missing parameter '" + name + "'");
    const auto& entry = params[name];
    nd::Shape shape;
    std::vector<double> values;
    try {
      shape = entry.at("shape").get<nd::Shape>();
      values = entry.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint: malformed entry '" + name + "': " + e.what());
    }
    if (shape != p.shape() || values.size() != p.size()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " + nd::shape_string(shape) +
                      ", model expects " + nd::shape_string(p.shape()));
    }
    auto dst = p.mutable_values();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     CheckpointScope scope, const nlohmann::json& metadata) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(store, scope, metadata).dump() << '\n';
}

nlohmann::json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path, CheckpointScope scope) {
  load_checkpoint_json(store, read_checkpoint(path), scope);
}

}  // namespace contactlab
