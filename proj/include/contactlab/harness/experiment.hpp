#pragma once

// Training, evaluation and the data plumbing around them.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "contactlab/harness/dataset.hpp"
#include "contactlab/harness/model.hpp"

namespace contactlab::harness {

struct PreparedData {
  MeshTopology mesh;
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Synthetic data from the config's seed, or a dataset directory. The last
/// `holdout` samples form the evaluation split; without a holdout the
/// training samples are evaluated.
PreparedData prepare_data(const ExperimentConfig& cfg);

/// n_i: number of training samples in which vertex i is positive.
std::vector<std::size_t> positive_counts(const std::vector<Sample>& samples, std::size_t num_vertices);

/// Per-vertex positive weights for L_c (all ones when φ is disabled).
std::vector<double> contact_weights(const ExperimentConfig& cfg, const std::vector<Sample>& train,
                                    const MeshTopology& mesh);

struct LossRecord {
  std::size_t step = 0;
  double contact = 0.0;
  double pal = 0.0;
  double scene = 0.0;
  double part = 0.0;
  double total = 0.0;  // composite + w_sem · semantic
  double semantic = 0.0;
};

struct TrainOptions {
  /// Where to write the offending batch when the loss turns non-finite.
  std::optional<std::filesystem::path> dump_dir;
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  std::vector<double> phi;
  std::vector<std::string> warnings;  // unique, in first-seen order
};

struct SampleLoss {
  losses::LossParts parts;
  nd::DiffArray semantic;
  nd::DiffArray total;
};

SampleLoss sample_loss(const ContactModel& model, const Sample& sample, const MeshTopology& mesh,
                       const std::vector<double>& phi);

/// Adam (or SGD with momentum) on the batch-mean loss. Parameters that do not require
/// gradients (frozen base weights under LoRA) are never touched.
TrainResult train(ContactModel& model, const std::vector<Sample>& samples, const MeshTopology& mesh,
                  const TrainOptions& opts = {});

void write_loss_curve(const std::filesystem::path& path, const std::vector<LossRecord>& curve);

struct Prediction {
  std::string image_id;
  std::vector<double> contact;
  std::vector<int> semantic;  // argmax class per vertex
};

/// Worker count for evaluation: CONTACTLAB_THREADS when set, else the
/// hardware concurrency.
std::size_t evaluation_threads();

std::vector<Prediction> predict(const ContactModel& model, const std::vector<Sample>& samples,
                                const ForwardOptions& opts = {}, std::size_t threads = 0);

struct GroupRecall {
  std::size_t tp = 0;
  std::size_t fn = 0;

  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
};

/// Vertex-level recall restricted to vertices whose part is in `parts`.
GroupRecall group_recall(const std::vector<Prediction>& preds, const std::vector<Sample>& samples,
                         const MeshTopology& mesh, const std::vector<std::size_t>& parts, double threshold);

/// Parts whose image frequency is at most `max_frequency`.
std::vector<std::size_t> rare_parts(const meshmetrics::ImbalanceReport& report, double max_frequency = 0.1);

struct Evaluation {
  std::vector<Prediction> predictions;
  std::vector<meshmetrics::MetricReport> reports;
  meshmetrics::ReportSummary summary;
};

/// Semantic predictions count only where the contact probability reaches
/// the threshold.
Evaluation evaluate(const ContactModel& model, const std::vector<Sample>& samples, const MeshTopology& mesh,
                    const ForwardOptions& opts = {});
Evaluation evaluate_predictions(std::vector<Prediction> preds, const std::vector<Sample>& samples,
                                const MeshTopology& mesh, double threshold);

/// JSON lines {image_id, contact, semantic}.
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);

struct ExperimentResult {
  TrainResult training;
  Evaluation evaluation;
};

/// Builds the model from `cfg`, trains on data.train and evaluates on data.eval.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data,
                                const TrainOptions& opts = {});

}  // namespace contactlab::harness
