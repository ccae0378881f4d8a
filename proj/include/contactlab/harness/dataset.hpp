#pragma once

// On-disk dataset layout:
//   mesh.json          {"vertices": [[x,y,z],...], "faces": [[i,j,k],...], "part_id": [...]}
//   labels.jsonl       {"image_id": str, "positives": [int], "semantic": {"<vertex>": class}}
//   annotations.jsonl  {"image_id", "part_mask", "scene_mask", "camera", "gt_2d"} (optional)
//   images/<id>.ppm    binary P6, 8-bit

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contactlab/harness/synthetic.hpp"

namespace contactlab::harness {

struct Dataset {
  MeshTopology mesh;
  std::vector<Sample> samples;
};

nlohmann::json mesh_to_json(const MeshTopology& mesh);
MeshTopology mesh_from_json(const nlohmann::json& doc);
MeshTopology read_mesh(const std::filesystem::path& path);
void write_mesh(const std::filesystem::path& path, const MeshTopology& mesh);

nlohmann::json labels_to_json(const ContactLabels& labels);
/// One record; errors name `where` (e.g. "labels.jsonl:3").
ContactLabels labels_from_json(const nlohmann::json& rec, std::size_t num_vertices, const std::string& where);
/// JSON-lines label file; blank lines are skipped. Out-of-range vertex ids
/// and malformed records raise DataError with the line number.
std::vector<ContactLabels> ingest_labels(const std::filesystem::path& path, const MeshTopology& mesh);
void write_labels(const std::filesystem::path& path, const std::vector<ContactLabels>& labels);

/// 8-bit binary PPM; values are rounded to k/255.
void write_ppm(const std::filesystem::path& path, std::size_t size, const std::vector<double>& rgb);
std::vector<double> read_ppm(const std::filesystem::path& path, std::size_t& size);

void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace contactlab::harness
