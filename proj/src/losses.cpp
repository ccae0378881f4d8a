#include "contactlab/losses.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace contactlab::losses {

double effective_weight(std::size_t count, double beta, double epsilon) {
  const double effective = (1.0 - std::pow(beta, static_cast<double>(count))) / (1.0 - beta);
  return 1.0 / (effective + epsilon);
}

ClassBalanceWeights class_balance_weights(std::span<const std::size_t> counts,
                                          const ClassBalanceOptions& opts) {
  if (!(opts.beta > 0.0 && opts.beta < 1.0)) throw ConfigError("class balance: beta must lie in (0,1)");
  if (!(opts.epsilon > 0.0)) throw ConfigError("class balance: epsilon must be positive");
  if (!(opts.target_mean > 0.0)) throw ConfigError("class balance: target mean must be positive");
  const double clip = opts.resolved_clip();
  if (!(clip > 0.0)) throw ConfigError("class balance: clip_max must be positive");
  if (counts.empty()) throw DataError("class balance: no vertices");
  bool any_positive = false;
  for (std::size_t n : counts) any_positive |= n > 0;
  if (!any_positive) throw DataError("class balance: no positive labels in the training split");

  ClassBalanceWeights w;
  w.counts.assign(counts.begin(), counts.end());
  w.beta = opts.beta;
  w.epsilon = opts.epsilon;
  w.target_mean = opts.target_mean;
  w.clip_max = clip;
  w.phi_raw.reserve(counts.size());
  for (std::size_t n : counts) w.phi_raw.push_back(effective_weight(n, opts.beta, opts.epsilon));

  const double v = static_cast<double>(counts.size());
  auto clipped_mean = [&](double scale) {
    double s = 0.0;
    for (double r : w.phi_raw) s += std::min(scale * r, clip);
    return s / v;
  };
  double raw_mean = 0.0;
  for (double r : w.phi_raw) raw_mean += r;
  raw_mean /= v;

  double scale = opts.target_mean / raw_mean;
  for (int round = 0; round < 100; ++round) {
    const double m = clipped_mean(scale);
    if (std::abs(m - opts.target_mean) <= 1e-6) break;
    scale *= opts.target_mean / m;
  }
  w.scale = scale;
  w.phi.reserve(counts.size());
  for (double r : w.phi_raw) w.phi.push_back(std::min(scale * r, clip));
  return w;
}

void write_weight_table(const std::filesystem::path& path, const ClassBalanceWeights& w) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "vertex_id,n_i,phi_raw,phi_final\n" << std::setprecision(17);
  for (std::size_t i = 0; i < w.phi.size(); ++i) {
    out << i << ',' << w.counts[i] << ',' << w.phi_raw[i] << ',' << w.phi[i] << '\n';
  }
}

namespace {

void check_length(std::size_t got, std::size_t want, const char* who, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(who) + ": " + what + " has " + std::to_string(got) +
                         " entries, expected " + std::to_string(want));
  }
}

nd::DiffArray zero_like_graph(const nd::DiffArray& x) { return nd::scale(nd::sum(x), 0.0); }

}  // namespace

nd::DiffArray weighted_bce(const nd::DiffArray& p, std::span<const double> labels,
                           std::span<const double> phi) {
  const std::size_t v = p.size();
  if (v == 0) throw DimensionError("weighted_bce: empty prediction");
  check_length(labels.size(), v, "weighted_bce", "labels");
  check_length(phi.size(), v, "weighted_bce", "phi");

  constexpr double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  for (double x : p.values()) {
    if (!(x > 0.0 && x < 1.0)) {
      warn("weighted_bce: probability outside (0,1) clamped");
      break;
    }
  }
  std::vector<double> pos_w(v), neg_w(v);
  for (std::size_t i = 0; i < v; ++i) {
    pos_w[i] = phi[i] * labels[i];
    neg_w[i] = 1.0 - labels[i];
  }
  const auto flat = nd::reshape(p, {v});
  const auto pc = nd::pointwise(flat, nd::Pointwise::clamp(lo, hi));
  const auto pos = nd::hadamard(nd::log(pc), nd::DiffArray::constant({v}, std::move(pos_w)));
  const auto neg = nd::hadamard(nd::log(nd::shift(nd::negate(pc), 1.0)),
                                nd::DiffArray::constant({v}, std::move(neg_w)));
  return nd::scale(nd::sum(nd::add(pos, neg)), -1.0 / static_cast<double>(v));
}

nd::DiffArray bce(const nd::DiffArray& p, std::span<const double> labels) {
  const std::vector<double> ones(p.size(), 1.0);
  return weighted_bce(p, labels, ones);
}

nd::DiffArray semantic_ce(const nd::DiffArray& logits, std::span<const int> targets,
                          const std::vector<bool>& active_mask) {
  if (logits.rank() != 2) throw DimensionError("semantic_ce: logits must be [VxS]");
  const std::size_t v = logits.dim(0), s = logits.dim(1);
  check_length(targets.size(), v, "semantic_ce", "targets");
  check_length(active_mask.size(), v, "semantic_ce", "mask");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < v; ++i) {
    if (!active_mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= s) {
      throw DataError("semantic_ce: class " + std::to_string(targets[i]) + " at vertex " +
                      std::to_string(i) + " outside [0," + std::to_string(s) + ")");
    }
    idx.push_back(i * s + static_cast<std::size_t>(targets[i]));
  }
  if (idx.empty()) {
    warn("semantic_ce: empty mask, loss defined as 0");
    return zero_like_graph(logits);
  }
  const std::size_t n = idx.size();
  auto picked = nd::gather(nd::log_softmax_rows(logits), std::move(idx), {n});
  return nd::negate(nd::mean(picked));
}

nd::DiffArray seg_ce(const heads::SegmentationMap& map, std::span<const int> targets) {
  const std::size_t n = map.logits.dim(0), c = map.classes();
  check_length(targets.size(), n, "seg_ce", "targets");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw DataError("seg_ce: label " + std::to_string(targets[i]) + " at patch " +
                      std::to_string(i) + " outside [0," + std::to_string(c) + ")");
    }
    idx[i] = i * c + static_cast<std::size_t>(targets[i]);
  }
  auto picked = nd::gather(nd::log_softmax_rows(map.logits), std::move(idx), {n});
  return nd::negate(nd::mean(picked));
}

void Camera::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("camera: scale must be positive");
  if (!std::isfinite(tx) || !std::isfinite(ty)) throw ConfigError("camera: non-finite translation");
}

std::vector<std::optional<std::pair<std::size_t, std::size_t>>> project_vertices(
    std::span<const Vec3> vertices, const Camera& cam, std::size_t height, std::size_t width) {
  cam.validate();
  std::vector<std::optional<std::pair<std::size_t, std::size_t>>> out(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const double u = cam.scale * vertices[i][0] + cam.tx;
    const double v = cam.scale * vertices[i][1] + cam.ty;
    const double col = std::floor(u + 0.5), row = std::floor(v + 0.5);
    if (col < 0.0 || row < 0.0 || col >= static_cast<double>(width) ||
        row >= static_cast<double>(height)) {
      continue;
    }
    out[i] = std::pair{static_cast<std::size_t>(row), static_cast<std::size_t>(col)};
  }
  return out;
}

nd::DiffArray pixel_anchor_loss(const nd::DiffArray& contact_prob, std::span<const Vec3> vertices,
                                const Camera& cam, const ContactMap2D& gt_2d) {
  check_length(vertices.size(), contact_prob.size(), "pixel_anchor_loss", "vertex positions");
  check_length(gt_2d.cells.size(), gt_2d.height * gt_2d.width, "pixel_anchor_loss", "gt map");
  const auto cells = project_vertices(vertices, cam, gt_2d.height, gt_2d.width);
  const auto prob = contact_prob.values();

  // Max-aggregation: each occupied cell takes its most confident vertex.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> best(gt_2d.height * gt_2d.width, kNone);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i]) continue;
    const std::size_t c = cells[i]->first * gt_2d.width + cells[i]->second;
    if (best[c] == kNone || prob[i] > prob[best[c]]) best[c] = i;
  }
  std::vector<std::size_t> picked;
  std::vector<double> labels;
  for (std::size_t c = 0; c < best.size(); ++c) {
    if (best[c] == kNone) continue;
    picked.push_back(best[c]);
    labels.push_back(gt_2d.cells[c] ? 1.0 : 0.0);
  }
  if (picked.empty()) throw DataError("pixel_anchor_loss: every vertex projects outside the map");
  const std::size_t n = picked.size();
  return bce(nd::gather(contact_prob, std::move(picked), {n}), labels);
}

ContactMap2D splat_labels(std::span<const double> labels, std::span<const Vec3> vertices,
                          const Camera& cam, std::size_t height, std::size_t width) {
  check_length(labels.size(), vertices.size(), "splat_labels", "labels");
  ContactMap2D map{height, width, std::vector<std::uint8_t>(height * width, 0)};
  const auto cells = project_vertices(vertices, cam, height, width);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] && labels[i] >= 0.5) map.cells[cells[i]->first * width + cells[i]->second] = 1;
  }
  return map;
}

void LossWeights::validate() const {
  bool any = false;
  for (double w : {w_c, w_pal, w_s, w_p}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    any |= w > 0.0;
  }
  if (!any) throw ConfigError("loss weights: at least one weight must be positive");
}

nd::DiffArray composite_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  nd::DiffArray total;
  auto accumulate = [&](const nd::DiffArray& part, double weight, const char* name) {
    if (weight == 0.0) return;
    if (!part.defined() || part.size() != 1) {
      throw DimensionError(std::string("composite_loss: term ") + name + " must be a scalar");
    }
    auto term = nd::scale(nd::reshape(part, {}), weight);
    total = total.defined() ? nd::add(total, term) : term;
  };
  accumulate(parts.contact, w.w_c, "L_c");
  accumulate(parts.pal, w.w_pal, "L_pal");
  accumulate(parts.scene, w.w_s, "L_s");
  accumulate(parts.part, w.w_p, "L_p");
  return total;
}

}  // namespace contactlab::losses
