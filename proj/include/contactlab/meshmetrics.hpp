#pragma once

// Contact evaluation over triangle meshes: binary precision/recall/F1,
// edge-graph geodesic error, semantic metrics and per-part imbalance counts.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace contactlab::meshmetrics {

inline constexpr std::size_t kBodyParts = 24;
inline constexpr double kDefaultThreshold = 0.5;

/// SMPL joint-segment names, index = part id.
extern const std::array<const char*, kBodyParts> kPartNames;

struct MeshTopology {
  std::vector<std::array<double, 3>> vertices;  // meters
  std::vector<std::array<std::size_t, 3>> faces;
  std::vector<int> part_id;  // [0, 24)

  std::size_t num_vertices() const { return vertices.size(); }
  /// Face indices in range, one part id per vertex, ids in [0,24).
  void validate() const;
  /// Unique undirected edges (i < j), sorted.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;
  bool connected() const;
};

struct ContactLabels {
  std::string image_id;
  std::vector<std::size_t> positives;       // sorted, unique
  std::map<std::size_t, int> semantic;      // vertex -> class, keys ⊆ positives

  /// Sorts/dedups positives and checks ids against V and semantic keys.
  void normalize(std::size_t num_vertices);
  std::vector<double> dense(std::size_t num_vertices) const;
  /// Class per vertex; positives without a semantic entry and negatives get 0.
  std::vector<int> dense_semantic(std::size_t num_vertices) const;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Predicted positive ⇔ prob ≥ threshold.
Confusion confusion(std::span<const double> pred_prob, const ContactLabels& gt,
                    double threshold = kDefaultThreshold);

/// Zero denominators yield 0.
Prf1 prf1(std::size_t tp, std::size_t fp, std::size_t fn);
inline Prf1 prf1(const Confusion& c) { return prf1(c.tp, c.fp, c.fn); }

/// Weighted vertex adjacency of the mesh edge graph.
class MeshGraph {
 public:
  explicit MeshGraph(const MeshTopology& mesh);

  std::size_t num_vertices() const { return adjacency_.size(); }

  /// Multi-source Dijkstra; unreachable vertices get +infinity.
  std::vector<double> distances(std::span<const std::size_t> sources) const;

 private:
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
};

/// Shortest edge-path distance (meters) from the nearest source.
std::vector<double> geodesic_distances(const MeshTopology& mesh, std::span<const std::size_t> sources);

struct GeodesicError {
  double cm = 0.0;              // +infinity when gt is empty but predictions exist
  std::size_t unreachable = 0;  // predicted vertices with no path to any gt vertex
  std::size_t predicted = 0;
};

/// Mean over predicted positives of the distance to the nearest ground-truth
/// positive, in centimeters. Unreachable vertices are excluded and counted.
GeodesicError geodesic_error(std::span<const double> pred_prob, const ContactLabels& gt,
                             const MeshGraph& graph, double threshold = kDefaultThreshold);

struct ImbalanceReport {
  std::array<std::size_t, kBodyParts> part_image_counts{};
  std::size_t images = 0;
  std::size_t contact_free_images = 0;
  double contact_free_fraction = 0.0;
  std::size_t positive_vertices = 0;
  std::size_t negative_vertices = 0;

  double part_frequency(std::size_t part) const {
    return images ? static_cast<double>(part_image_counts[part]) / static_cast<double>(images) : 0.0;
  }
  /// Σ negatives / Σ positives over all images (0 when there are no positives).
  double negative_to_positive_ratio() const;
};

/// A part counts for an image when any of its vertices is positive; an
/// image is contact-free when it has zero positive vertices.
ImbalanceReport imbalance_report(std::span<const ContactLabels> dataset, const MeshTopology& mesh);

struct SemanticCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  SemanticCounts& operator+=(const SemanticCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn;
    return *this;
  }
  bool operator==(const SemanticCounts&) const = default;
};

/// A prediction is made at every vertex where `predicted` is set (all
/// vertices when empty). TP: prediction at a gt-positive vertex with the
/// matching class. FP: other predictions. FN: gt positives without a TP.
SemanticCounts semantic_counts(std::span<const int> pred_semantic, const ContactLabels& gt,
                               const std::vector<bool>& predicted = {});
Prf1 semantic_metrics(std::span<const int> pred_semantic, const ContactLabels& gt,
                      const std::vector<bool>& predicted = {});

struct MetricReport {
  std::string image_id;
  Confusion confusion;
  Prf1 binary;
  GeodesicError geodesic;
  SemanticCounts semantic_counts;
  Prf1 semantic;
  std::array<std::size_t, kBodyParts> per_part_counts{};  // predicted-positive vertices per part
};

struct ReportSummary {
  Confusion confusion;
  Prf1 binary;  // from summed counts
  double geodesic_cm = 0.0;  // mean over images with a finite value
  std::size_t geodesic_infinite_images = 0;
  std::size_t geodesic_unreachable = 0;
  SemanticCounts semantic_counts;
  Prf1 semantic;
  std::size_t images = 0;
};

MetricReport evaluate_image(std::span<const double> pred_prob, std::span<const int> pred_semantic,
                            const ContactLabels& gt, const MeshTopology& mesh, const MeshGraph& graph,
                            double threshold = kDefaultThreshold);
/// Reduces in the given order, so the result is independent of how the
/// per-image reports were computed.
ReportSummary summarize(std::span<const MetricReport> reports);

/// "inf" for +infinity, shortest round-trip decimal otherwise.
std::string format_number(double v);

void write_reports_csv(const std::filesystem::path& path, std::span<const MetricReport> reports,
                       const ReportSummary& summary);
void write_reports_json(const std::filesystem::path& path, std::span<const MetricReport> reports,
                        const ReportSummary& summary);
/// 24 rows: part_id,part_name,images_with_contact,fraction.
void write_part_histogram_csv(const std::filesystem::path& path, const ImbalanceReport& report);

}  // namespace contactlab::meshmetrics
