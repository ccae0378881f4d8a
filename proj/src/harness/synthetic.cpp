#include "contactlab/harness/synthetic.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "contactlab/errors.hpp"

namespace contactlab::harness {

using meshmetrics::kBodyParts;
using meshmetrics::kPartNames;

PartPlan PartPlan::uniform(double rate) {
  PartPlan p;
  p.rates.fill(rate);
  return p;
}

PartPlan PartPlan::desk_default() {
  PartPlan p = uniform(0.05);
  for (std::size_t k : part_group("feet")) p.rates[k] = 0.8;
  for (std::size_t k : part_group("hands")) p.rates[k] = 0.3;
  return p;
}

void PartPlan::validate() const {
  for (std::size_t k = 0; k < kBodyParts; ++k) {
    if (!(rates[k] >= 0.0 && rates[k] <= 1.0)) {
      throw ConfigError(std::string("plan: rate for ") + kPartNames[k] + " outside [0,1]");
    }
  }
}

std::size_t part_index(const std::string& name) {
  for (std::size_t k = 0; k < kBodyParts; ++k)
    if (name == kPartNames[k]) return k;
  throw ConfigError("unknown body part '" + name + "'");
}

std::vector<std::size_t> part_group(const std::string& name) {
  if (name == "feet") return {part_index("left_foot"), part_index("right_foot")};
  if (name == "hands") return {part_index("left_hand"), part_index("right_hand")};
  return {part_index(name)};
}

MeshTopology icosphere(int level, double radius) {
  if (level < 0 || level > 6) throw ConfigError("icosphere: level must lie in [0,6]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<std::array<double, 3>> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                                          {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                                          {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<std::size_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  auto project = [](std::array<double, 3> p) {
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    return std::array<double, 3>{p[0] / n, p[1] / n, p[2] / n};
  };
  for (auto& p : v) p = project(p);
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> mid;
    auto midpoint = [&](std::size_t a, std::size_t b) {
      const auto key = std::minmax(a, b);
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      v.push_back(project({(v[a][0] + v[b][0]) / 2, (v[a][1] + v[b][1]) / 2, (v[a][2] + v[b][2]) / 2}));
      mid.emplace(key, v.size() - 1);
      return v.size() - 1;
    };
    std::vector<std::array<std::size_t, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const std::size_t ab = midpoint(tri[0], tri[1]);
      const std::size_t bc = midpoint(tri[1], tri[2]);
      const std::size_t ca = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], ab, ca});
      next.push_back({tri[1], bc, ab});
      next.push_back({tri[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  MeshTopology mesh;
  for (auto& p : v) mesh.vertices.push_back({p[0] * radius, p[1] * radius, p[2] * radius});
  mesh.faces = std::move(f);
  mesh.part_id.assign(mesh.vertices.size(), 0);
  return mesh;
}

int icosphere_level(std::size_t vertices) {
  for (int l = 0; l <= 6; ++l) {
    if (10 * (std::size_t{1} << (2 * l)) + 2 == vertices) return l;
  }
  throw ConfigError("synthetic mesh: no icosphere has " + std::to_string(vertices) +
                    " vertices (use 12, 42, 162, 642, 2562, ...)");
}

std::vector<int> assign_parts(const MeshTopology& mesh) {
  std::array<std::array<double, 3>, kBodyParts> anchors;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t k = 0; k < kBodyParts; ++k) {
    const double y = 1.0 - 2.0 * (static_cast<double>(k) + 0.5) / kBodyParts;
    const double r = std::sqrt(1.0 - y * y);
    const double th = golden * static_cast<double>(k);
    anchors[k] = {r * std::cos(th), y, r * std::sin(th)};
  }
  std::vector<int> out(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& p = mesh.vertices[i];
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    double best = -2.0;
    for (std::size_t k = 0; k < kBodyParts; ++k) {
      const double dot = (p[0] * anchors[k][0] + p[1] * anchors[k][1] + p[2] * anchors[k][2]) / n;
      if (dot > best) {
        best = dot;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

MeshTopology synthetic_mesh(std::size_t vertices) {
  auto mesh = icosphere(icosphere_level(vertices));
  mesh.part_id = assign_parts(mesh);
  return mesh;
}

std::pair<std::size_t, std::size_t> part_slot(std::size_t part) {
  return {1 + 2 * (part / 8), part % 8};
}

std::array<double, 3> class_color(int cls, std::size_t classes) {
  if (cls < 1 || static_cast<std::size_t>(cls) >= classes) {
    throw ConfigError("class_color: class " + std::to_string(cls) + " has no color");
  }
  // Evenly spaced saturated hues.
  const double h = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(classes - 1);
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1, x, 0};
    case 1: return {x, 1, 0};
    case 2: return {0, 1, x};
    case 3: return {0, x, 1};
    case 4: return {x, 0, 1};
    default: return {1, 0, x};
  }
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

std::vector<Sample> generate_synthetic(std::size_t n, const PartPlan& plan, const Rng& rng,
                                       const MeshTopology& mesh, const SyntheticOptions& opts) {
  plan.validate();
  mesh.validate();
  if (opts.image_size % 8 != 0 || opts.image_size / 8 < 3) {
    throw ConfigError("synthetic: image_size must be a multiple of 8 and at least 24");
  }
  if (opts.patch_size == 0 || opts.image_size % opts.patch_size != 0) {
    throw ConfigError("synthetic: image_size must be a multiple of patch_size");
  }
  if (opts.semantic_classes < 2) throw ConfigError("synthetic: need at least 2 semantic classes");

  const std::size_t s = opts.image_size, cell = s / 8, grid = s / opts.patch_size;
  std::vector<losses::Vec3> positions(mesh.vertices.begin(), mesh.vertices.end());
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = rng.split(i);
    Sample smp;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%06zu", i);
    smp.image_id = id;
    smp.image_size = s;

    std::array<int, kBodyParts> cls{};  // 0 = no contact
    for (std::size_t k = 0; k < kBodyParts; ++k) {
      const bool active = r.bernoulli(plan.rates[k]);
      const int c = 1 + static_cast<int>(r.below(opts.semantic_classes - 1));
      if (active) cls[k] = c;
    }
    smp.camera = {r.uniform(18.0, 22.0), r.uniform(7.5, 8.5), r.uniform(7.5, 8.5)};

    smp.image.resize(s * s * 3);
    for (double& px : smp.image) px = quantize(0.1 + r.uniform(-opts.noise, opts.noise));
    for (std::size_t k = 0; k < kBodyParts; ++k) {
      if (!cls[k]) continue;
      const auto color = class_color(cls[k], opts.semantic_classes);
      const auto [cr, cc] = part_slot(k);
      for (std::size_t y = cr * cell + 1; y < (cr + 1) * cell - 1; ++y)
        for (std::size_t x = cc * cell + 1; x < (cc + 1) * cell - 1; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) smp.image[(y * s + x) * 3 + ch] = quantize(color[ch]);
    }

    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
      const int c = cls[static_cast<std::size_t>(mesh.part_id[v])];
      if (!c) continue;
      smp.labels.positives.push_back(v);
      smp.labels.semantic.emplace(v, c);
    }
    smp.labels.image_id = smp.image_id;

    smp.has_annotations = true;
    smp.part_mask.assign(grid * grid, static_cast<int>(kBodyParts));
    smp.scene_mask.assign(grid * grid, 0);
    for (std::size_t k = 0; k < kBodyParts; ++k) {
      if (!cls[k]) continue;
      const auto [cr, cc] = part_slot(k);
      const std::size_t py = (cr * cell + cell / 2) / opts.patch_size;
      const std::size_t px = (cc * cell + cell / 2) / opts.patch_size;
      const std::size_t p = py * grid + px;
      if (smp.part_mask[p] == static_cast<int>(kBodyParts)) smp.part_mask[p] = static_cast<int>(k);
      smp.scene_mask[p] = std::max(smp.scene_mask[p], cls[k]);
    }
    smp.gt_2d = losses::splat_labels(smp.labels.dense(mesh.num_vertices()), positions, smp.camera,
                                     opts.map_size, opts.map_size);
    out.push_back(std::move(smp));
  }
  return out;
}

}  // namespace contactlab::harness
