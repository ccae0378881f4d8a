#include "contactlab/harness/dataset.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "contactlab/errors.hpp"

namespace contactlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::size_t to_index(const json& j, const std::string& where, const char* what) {
  if (!j.is_number_integer()) throw DataError(where + ": " + what + " must be an integer");
  const auto v = j.get<long long>();
  if (v < 0) throw DataError(where + ": negative " + what + " " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

}  // namespace

json mesh_to_json(const MeshTopology& mesh) {
  json v = json::array(), f = json::array();
  for (const auto& p : mesh.vertices) v.push_back({p[0], p[1], p[2]});
  for (const auto& t : mesh.faces) f.push_back({t[0], t[1], t[2]});
  return {{"vertices", std::move(v)}, {"faces", std::move(f)}, {"part_id", mesh.part_id}};
}

MeshTopology mesh_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("mesh: expected a JSON object");
  for (const char* key : {"vertices", "faces", "part_id"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw DataError(std::string("mesh: missing array '") + key + "'");
    }
  }
  MeshTopology mesh;
  for (std::size_t i = 0; i < doc["vertices"].size(); ++i) {
    const auto& p = doc["vertices"][i];
    if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number()) {
      throw DataError("mesh: vertex " + std::to_string(i) + " is not [x,y,z]");
    }
    mesh.vertices.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  for (std::size_t i = 0; i < doc["faces"].size(); ++i) {
    const auto& t = doc["faces"][i];
    const std::string where = "mesh: face " + std::to_string(i);
    if (!t.is_array() || t.size() != 3) throw DataError(where + " is not [i,j,k]");
    mesh.faces.push_back({to_index(t[0], where, "index"), to_index(t[1], where, "index"),
                          to_index(t[2], where, "index")});
  }
  for (const auto& p : doc["part_id"]) {
    if (!p.is_number_integer()) throw DataError("mesh: part ids must be integers");
    mesh.part_id.push_back(p.get<int>());
  }
  mesh.validate();
  return mesh;
}

MeshTopology read_mesh(const fs::path& path) {
  try {
    return mesh_from_json(parse_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_mesh(const fs::path& path, const MeshTopology& mesh) {
  write_text(path, mesh_to_json(mesh).dump() + "\n");
}

json labels_to_json(const ContactLabels& labels) {
  json sem = json::object();
  for (const auto& [v, c] : labels.semantic) sem[std::to_string(v)] = c;
  return {{"image_id", labels.image_id}, {"positives", labels.positives}, {"semantic", std::move(sem)}};
}

ContactLabels labels_from_json(const json& rec, std::size_t num_vertices, const std::string& where) {
  if (!rec.is_object()) throw DataError(where + ": record must be a JSON object");
  if (!rec.contains("image_id") || !rec["image_id"].is_string()) {
    throw DataError(where + ": missing string field 'image_id'");
  }
  if (!rec.contains("positives") || !rec["positives"].is_array()) {
    throw DataError(where + ": missing array field 'positives'");
  }
  ContactLabels l;
  l.image_id = rec["image_id"].get<std::string>();
  for (const auto& v : rec["positives"]) l.positives.push_back(to_index(v, where, "vertex id"));
  if (rec.contains("semantic")) {
    const auto& sem = rec["semantic"];
    if (!sem.is_object()) throw DataError(where + ": 'semantic' must be an object");
    for (const auto& [key, cls] : sem.items()) {
      std::size_t vertex = 0;
      std::size_t used = 0;
      try {
        vertex = std::stoul(key, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != key.size() || key.empty() || key[0] == '-') {
        throw DataError(where + ": semantic key '" + key + "' is not a vertex id");
      }
      if (!cls.is_number_integer()) throw DataError(where + ": semantic class must be an integer");
      l.semantic.emplace(vertex, cls.get<int>());
    }
  }
  try {
    l.normalize(num_vertices);
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return l;
}

std::vector<ContactLabels> ingest_labels(const fs::path& path, const MeshTopology& mesh) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ContactLabels> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(labels_from_json(rec, mesh.num_vertices(), where));
  }
  return out;
}

void write_labels(const fs::path& path, const std::vector<ContactLabels>& labels) {
  std::string text;
  for (const auto& l : labels) text += labels_to_json(l).dump() + "\n";
  write_text(path, text);
}

void write_ppm(const fs::path& path, std::size_t size, const std::vector<double>& rgb) {
  if (rgb.size() != size * size * 3) throw DimensionError("write_ppm: pixel count mismatch");
  std::string text = "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
  for (double v : rgb) text.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  write_text(path, text);
}

std::vector<double> read_ppm(const fs::path& path, std::size_t& size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw DataError(path.string() + ": not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad PPM header");
  }
  if (w != h || w == 0) throw DataError(path.string() + ": images must be square");
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PPM is supported");
  std::string bytes(w * h * 3, '\0');
  if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  size = w;
  std::vector<double> rgb(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) rgb[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return rgb;
}

namespace {

json annotation_json(const Sample& s) {
  return {{"image_id", s.image_id},
          {"part_mask", s.part_mask},
          {"scene_mask", s.scene_mask},
          {"camera", {{"scale", s.camera.scale}, {"tx", s.camera.tx}, {"ty", s.camera.ty}}},
          {"gt_2d", {{"height", s.gt_2d.height}, {"width", s.gt_2d.width}, {"cells", s.gt_2d.cells}}}};
}

void read_annotation(const json& rec, Sample& s, const std::string& where) {
  try {
    s.part_mask = rec.at("part_mask").get<std::vector<int>>();
    s.scene_mask = rec.at("scene_mask").get<std::vector<int>>();
    const auto& cam = rec.at("camera");
    s.camera = {cam.at("scale").get<double>(), cam.at("tx").get<double>(), cam.at("ty").get<double>()};
    const auto& g = rec.at("gt_2d");
    s.gt_2d.height = g.at("height").get<std::size_t>();
    s.gt_2d.width = g.at("width").get<std::size_t>();
    s.gt_2d.cells = g.at("cells").get<std::vector<std::uint8_t>>();
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (s.gt_2d.cells.size() != s.gt_2d.height * s.gt_2d.width) {
    throw DataError(where + ": gt_2d cell count does not match its size");
  }
  s.has_annotations = true;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "images");
  write_mesh(dir / "mesh.json", data.mesh);
  std::vector<ContactLabels> labels;
  std::string annotations;
  for (const auto& s : data.samples) {
    labels.push_back(s.labels);
    if (s.has_annotations) annotations += annotation_json(s).dump() + "\n";
    write_ppm(dir / "images" / (s.image_id + ".ppm"), s.image_size, s.image);
  }
  write_labels(dir / "labels.jsonl", labels);
  write_text(dir / "annotations.jsonl", annotations);
}

Dataset read_dataset(const fs::path& dir) {
  Dataset data;
  data.mesh = read_mesh(dir / "mesh.json");
  const auto labels = ingest_labels(dir / "labels.jsonl", data.mesh);

  std::map<std::string, json> annotations;
  if (fs::exists(dir / "annotations.jsonl")) {
    std::ifstream in(dir / "annotations.jsonl");
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = "annotations.jsonl:" + std::to_string(lineno);
      try {
        auto rec = json::parse(line);
        const auto id = rec.at("image_id").get<std::string>();
        annotations[id] = std::move(rec);
      } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
      }
    }
  }
  for (const auto& l : labels) {
    Sample s;
    s.image_id = l.image_id;
    s.labels = l;
    s.image = read_ppm(dir / "images" / (l.image_id + ".ppm"), s.image_size);
    if (auto it = annotations.find(l.image_id); it != annotations.end()) {
      read_annotation(it->second, s, "annotations for '" + l.image_id + "'");
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace contactlab::harness
