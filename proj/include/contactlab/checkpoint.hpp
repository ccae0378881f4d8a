#pragma once

// Checkpoint documents map dot-separated parameter names to
//   {"shape": [...], "values": [...]}
// under a top-level "parameters" object. Adapter weights live under names
// starting with "lora." so base and adapter sets can be saved or loaded
// independently.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "contactlab/params.hpp"

namespace contactlab {

enum class CheckpointScope { all, base, lora };


bool in_scope(const std::string& name, CheckpointScope scope);

nlohmann::json checkpoint_to_json(const ParamStore& store, CheckpointScope scope = CheckpointScope::all,
                                  const nlohmann::json& metadata = nlohmann::json::object());

/// Copies values for every in-scope parameter of `store` from `doc`.
/// Missing names or shape mismatches raise DataError.
void load_checkpoint_json(ParamStore& store, const nlohmann::json& doc,
                          CheckpointScope scope = CheckpointScope::all);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     CheckpointScope scope = CheckpointScope::all,
                     const nlohmann::json& metadata = nlohmann::json::object());
nlohmann::json read_checkpoint(const std::filesystem::path& path);
void load_checkpoint(ParamStore& store, const std::filesystem::path& path,
                     CheckpointScope scope = CheckpointScope::all);

}  // namespace contactlab
