#include "contactlab/meshmetrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

#include "contactlab/errors.hpp"

namespace contactlab::meshmetrics {

const std::array<const char*, kBodyParts> kPartNames = {
    "pelvis",        "left_hip",       "right_hip",  "spine1",     "left_knee",   "right_knee",
    "spine2",        "left_ankle",     "right_ankle", "spine3",    "left_foot",   "right_foot",
    "neck",          "left_collar",    "right_collar", "head",     "left_shoulder", "right_shoulder",
    "left_elbow",    "right_elbow",    "left_wrist", "right_wrist", "left_hand",  "right_hand"};

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void MeshTopology::validate() const {
  const std::size_t v = vertices.size();
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (std::size_t idx : faces[f]) {
      if (idx >= v) {
        throw DataError("mesh: face " + std::to_string(f) + " references vertex " +
                        std::to_string(idx) + " of " + std::to_string(v));
      }
    }
  }
  if (part_id.size() != v) {
    throw DataError("mesh: " + std::to_string(part_id.size()) + " part ids for " +
                    std::to_string(v) + " vertices");
  }
  for (std::size_t i = 0; i < v; ++i) {
    if (part_id[i] < 0 || part_id[i] >= static_cast<int>(kBodyParts)) {
      throw DataError("mesh: vertex " + std::to_string(i) + " has undefined part " +
                      std::to_string(part_id[i]));
    }
  }
  for (const auto& p : vertices)
    for (double c : p)
      if (!std::isfinite(c)) throw DataError("mesh: non-finite vertex position");
}

std::vector<std::pair<std::size_t, std::size_t>> MeshTopology::edges() const {
  std::set<std::pair<std::size_t, std::size_t>> unique;
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      std::size_t a = f[k], b = f[(k + 1) % 3];
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      unique.emplace(a, b);
    }
  }
  return {unique.begin(), unique.end()};
}

bool MeshTopology::connected() const {
  if (vertices.empty()) return true;
  MeshGraph graph(*this);
  const std::size_t src = 0;
  const auto d = graph.distances(std::span(&src, 1));
  return std::all_of(d.begin(), d.end(), [](double x) { return std::isfinite(x); });
}

void ContactLabels::normalize(std::size_t num_vertices) {
  std::sort(positives.begin(), positives.end());
  positives.erase(std::unique(positives.begin(), positives.end()), positives.end());
  if (!positives.empty() && positives.back() >= num_vertices) {
    throw DataError("labels '" + image_id + "': vertex id " + std::to_string(positives.back()) +
                    " out of range for " + std::to_string(num_vertices) + " vertices");
  }
  for (const auto& [v, cls] : semantic) {
    if (!std::binary_search(positives.begin(), positives.end(), v)) {
      throw DataError("labels '" + image_id + "': semantic label on non-contact vertex " +
                      std::to_string(v));
    }
    if (cls < 0) throw DataError("labels '" + image_id + "': negative semantic class");
  }
}

std::vector<double> ContactLabels::dense(std::size_t num_vertices) const {
  std::vector<double> out(num_vertices, 0.0);
  for (std::size_t v : positives) {
    if (v >= num_vertices) throw DataError("labels: vertex id out of range");
    out[v] = 1.0;
  }
  return out;
}

std::vector<int> ContactLabels::dense_semantic(std::size_t num_vertices) const {
  std::vector<int> out(num_vertices, 0);
  for (const auto& [v, cls] : semantic) {
    if (v >= num_vertices) throw DataError("labels: vertex id out of range");
    out[v] = cls;
  }
  return out;
}

Confusion confusion(std::span<const double> pred_prob, const ContactLabels& gt, double threshold) {
  const auto truth = gt.dense(pred_prob.size());
  Confusion c;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    const bool p = pred_prob[i] >= threshold;
    const bool t = truth[i] > 0.5;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Prf1 prf1(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf1 r;
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

MeshGraph::MeshGraph(const MeshTopology& mesh) : adjacency_(mesh.num_vertices()) {
  mesh.validate();
  for (const auto& [a, b] : mesh.edges()) {
    const auto& pa = mesh.vertices[a];
    const auto& pb = mesh.vertices[b];
    const double len = std::sqrt((pa[0] - pb[0]) * (pa[0] - pb[0]) + (pa[1] - pb[1]) * (pa[1] - pb[1]) +
                                 (pa[2] - pb[2]) * (pa[2] - pb[2]));
    adjacency_[a].emplace_back(b, len);
    adjacency_[b].emplace_back(a, len);
  }
}

std::vector<double> MeshGraph::distances(std::span<const std::size_t> sources) const {
  if (sources.empty()) throw DataError("geodesic_distances: empty source set");
  std::vector<double> dist(adjacency_.size(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t s : sources) {
    if (s >= adjacency_.size()) throw DataError("geodesic_distances: source out of range");
    if (dist[s] != 0.0) {
      dist[s] = 0.0;
      heap.emplace(0.0, s);
    }
  }
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (const auto& [w, len] : adjacency_[u]) {
      const double nd = d + len;
      if (nd < dist[w]) {
        dist[w] = nd;
        heap.emplace(nd, w);
      }
    }
  }
  return dist;
}

std::vector<double> geodesic_distances(const MeshTopology& mesh, std::span<const std::size_t> sources) {
  return MeshGraph(mesh).distances(sources);
}

GeodesicError geodesic_error(std::span<const double> pred_prob, const ContactLabels& gt,
                             const MeshGraph& graph, double threshold) {
  if (pred_prob.size() != graph.num_vertices()) {
    throw DataError("geodesic_error: " + std::to_string(pred_prob.size()) + " predictions for " +
                    std::to_string(graph.num_vertices()) + " vertices");
  }
  GeodesicError out;
  std::vector<std::size_t> predicted;
  for (std::size_t i = 0; i < pred_prob.size(); ++i)
    if (pred_prob[i] >= threshold) predicted.push_back(i);
  out.predicted = predicted.size();
  if (predicted.empty()) return out;
  if (gt.positives.empty()) {
    out.cm = kInf;
    return out;
  }
  const auto dist = graph.distances(gt.positives);
  double sum = 0.0;
  std::size_t reached = 0;
  for (std::size_t v : predicted) {
    if (!std::isfinite(dist[v])) {
      ++out.unreachable;
      continue;
    }
    sum += dist[v];
    ++reached;
  }
  if (out.unreachable) {
    warn("geodesic_error: " + std::to_string(out.unreachable) +
         " predicted vertices unreachable from ground truth in '" + gt.image_id + "'");
  }
  out.cm = reached ? 100.0 * sum / static_cast<double>(reached) : 0.0;
  return out;
}

double ImbalanceReport::negative_to_positive_ratio() const {
  if (positive_vertices == 0) return 0.0;
  return static_cast<double>(negative_vertices) / static_cast<double>(positive_vertices);
}

ImbalanceReport imbalance_report(std::span<const ContactLabels> dataset, const MeshTopology& mesh) {
  ImbalanceReport r;
  const std::size_t v = mesh.num_vertices();
  if (mesh.part_id.size() != v) throw DataError("imbalance_report: mesh lacks part ids");
  for (const auto& labels : dataset) {
    ++r.images;
    std::array<bool, kBodyParts> hit{};
    for (std::size_t p : labels.positives) {
      if (p >= v) throw DataError("imbalance_report: vertex id out of range in '" + labels.image_id + "'");
      hit[static_cast<std::size_t>(mesh.part_id[p])] = true;
    }
    for (std::size_t k = 0; k < kBodyParts; ++k) r.part_image_counts[k] += hit[k];
    if (labels.positives.empty()) ++r.contact_free_images;
    r.positive_vertices += labels.positives.size();
    r.negative_vertices += v - labels.positives.size();
  }
  if (r.images) {
    r.contact_free_fraction = static_cast<double>(r.contact_free_images) / static_cast<double>(r.images);
  }
  return r;
}

SemanticCounts semantic_counts(std::span<const int> pred_semantic, const ContactLabels& gt,
                               const std::vector<bool>& predicted) {
  const std::size_t v = pred_semantic.size();
  if (!predicted.empty() && predicted.size() != v) {
    throw DimensionError("semantic_metrics: prediction mask length differs from vertex count");
  }
  const auto truth = gt.dense(v);
  const auto classes = gt.dense_semantic(v);
  SemanticCounts c;
  std::size_t gt_positive = 0;
  for (std::size_t i = 0; i < v; ++i) {
    const bool is_gt = truth[i] > 0.5;
    gt_positive += is_gt;
    if (!predicted.empty() && !predicted[i]) continue;
    if (is_gt && pred_semantic[i] == classes[i]) ++c.tp;
    else ++c.fp;
  }
  c.fn = gt_positive - c.tp;
  return c;
}

Prf1 semantic_metrics(std::span<const int> pred_semantic, const ContactLabels& gt,
                      const std::vector<bool>& predicted) {
  const auto c = semantic_counts(pred_semantic, gt, predicted);
  return prf1(c.tp, c.fp, c.fn);
}

MetricReport evaluate_image(std::span<const double> pred_prob, std::span<const int> pred_semantic,
                            const ContactLabels& gt, const MeshTopology& mesh, const MeshGraph& graph,
                            double threshold) {
  MetricReport r;
  r.image_id = gt.image_id;
  r.confusion = confusion(pred_prob, gt, threshold);
  r.binary = prf1(r.confusion);
  r.geodesic = geodesic_error(pred_prob, gt, graph, threshold);
  std::vector<bool> predicted(pred_prob.size());
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    predicted[i] = pred_prob[i] >= threshold;
    if (predicted[i]) ++r.per_part_counts[static_cast<std::size_t>(mesh.part_id[i])];
  }
  r.semantic_counts = semantic_counts(pred_semantic, gt, predicted);
  r.semantic = prf1(r.semantic_counts.tp, r.semantic_counts.fp, r.semantic_counts.fn);
  return r;
}

ReportSummary summarize(std::span<const MetricReport> reports) {
  ReportSummary s;
  double geo_sum = 0.0;
  std::size_t geo_n = 0;
  for (const auto& r : reports) {
    ++s.images;
    s.confusion += r.confusion;
    s.semantic_counts += r.semantic_counts;
    s.geodesic_unreachable += r.geodesic.unreachable;
    if (std::isfinite(r.geodesic.cm)) {
      geo_sum += r.geodesic.cm;
      ++geo_n;
    } else {
      ++s.geodesic_infinite_images;
    }
  }
  s.binary = prf1(s.confusion);
  s.semantic = prf1(s.semantic_counts.tp, s.semantic_counts.fp, s.semantic_counts.fn);
  s.geodesic_cm = geo_n ? geo_sum / static_cast<double>(geo_n) : 0.0;
  return s;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

nlohmann::json number_json(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json parts = nlohmann::json::object();
  for (std::size_t k = 0; k < kBodyParts; ++k) parts[kPartNames[k]] = r.per_part_counts[k];
  return {{"image_id", r.image_id},
          {"tp", r.confusion.tp},
          {"fp", r.confusion.fp},
          {"fn", r.confusion.fn},
          {"tn", r.confusion.tn},
          {"precision", r.binary.precision},
          {"recall", r.binary.recall},
          {"f1", r.binary.f1},
          {"geodesic_error_cm", number_json(r.geodesic.cm)},
          {"geodesic_unreachable", r.geodesic.unreachable},
          {"semantic_precision", r.semantic.precision},
          {"semantic_recall", r.semantic.recall},
          {"semantic_f1", r.semantic.f1},
          {"per_part_counts", std::move(parts)}};
}

}  // namespace

void write_reports_csv(const std::filesystem::path& path, std::span<const MetricReport> reports,
                       const ReportSummary& summary) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "image_id,tp,fp,fn,tn,precision,recall,f1,geodesic_error_cm,geodesic_unreachable,"
         "semantic_precision,semantic_recall,semantic_f1\n";
  for (const auto& r : reports) {
    out << r.image_id << ',' << r.confusion.tp << ',' << r.confusion.fp << ',' << r.confusion.fn << ','
        << r.confusion.tn << ',' << format_number(r.binary.precision) << ','
        << format_number(r.binary.recall) << ',' << format_number(r.binary.f1) << ','
        << format_number(r.geodesic.cm) << ',' << r.geodesic.unreachable << ','
        << format_number(r.semantic.precision) << ',' << format_number(r.semantic.recall) << ','
        << format_number(r.semantic.f1) << '\n';
  }
  const auto& c = summary.confusion;
  out << "__summary__," << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << ','
      << format_number(summary.binary.precision) << ',' << format_number(summary.binary.recall) << ','
      << format_number(summary.binary.f1) << ',' << format_number(summary.geodesic_cm) << ','
      << summary.geodesic_unreachable << ',' << format_number(summary.semantic.precision) << ','
      << format_number(summary.semantic.recall) << ',' << format_number(summary.semantic.f1) << '\n';
}

void write_reports_json(const std::filesystem::path& path, std::span<const MetricReport> reports,
                        const ReportSummary& summary) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : reports) images.push_back(report_json(r));
  const auto& c = summary.confusion;
  nlohmann::json doc = {
      {"images", std::move(images)},
      {"summary",
       {{"images", summary.images},
        {"tp", c.tp},
        {"fp", c.fp},
        {"fn", c.fn},
        {"tn", c.tn},
        {"precision", summary.binary.precision},
        {"recall", summary.binary.recall},
        {"f1", summary.binary.f1},
        {"geodesic_error_cm", number_json(summary.geodesic_cm)},
        {"geodesic_infinite_images", summary.geodesic_infinite_images},
        {"geodesic_unreachable", summary.geodesic_unreachable},
        {"semantic_precision", summary.semantic.precision},
        {"semantic_recall", summary.semantic.recall},
        {"semantic_f1", summary.semantic.f1}}}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void write_part_histogram_csv(const std::filesystem::path& path, const ImbalanceReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "part_id,part_name,images_with_contact,fraction\n";
  for (std::size_t k = 0; k < kBodyParts; ++k) {
    out << k << ',' << kPartNames[k] << ',' << report.part_image_counts[k] << ','
        << format_number(report.part_frequency(k)) << '\n';
  }
}

}  // namespace contactlab::meshmetrics
