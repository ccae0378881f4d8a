#include "contactlab/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "contactlab/errors.hpp"

namespace contactlab::harness {

namespace fs = std::filesystem;
using meshmetrics::MeshGraph;

namespace {
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;
}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData data;
  std::vector<Sample> all;
  std::size_t holdout = cfg.dataset.holdout;
  if (cfg.dataset.source == DatasetConfig::Source::synthetic) {
    data.mesh = synthetic_mesh(cfg.heads.vertices);
    SyntheticOptions opts;
    opts.image_size = cfg.encoder.image_size;
    opts.patch_size = cfg.encoder.patch_size;
    opts.semantic_classes = cfg.heads.semantic_classes;
    all = generate_synthetic(cfg.dataset.n + holdout, cfg.dataset.plan, Rng(cfg.dataset.seed), data.mesh, opts);
  } else {
    auto ds = read_dataset(cfg.dataset.path);
    data.mesh = std::move(ds.mesh);
    all = std::move(ds.samples);
    if (data.mesh.num_vertices() != cfg.heads.vertices) {
      throw DataError("dataset mesh has " + std::to_string(data.mesh.num_vertices()) +
                      " vertices but the model predicts " + std::to_string(cfg.heads.vertices));
    }
    for (const auto& s : all) {
      if (s.image_size != cfg.encoder.image_size) {
        throw DataError("image '" + s.image_id + "' is " + std::to_string(s.image_size) +
                        " pixels wide, expected " + std::to_string(cfg.encoder.image_size));
      }
    }
    if (holdout >= all.size() && holdout > 0) {
      throw DataError("holdout of " + std::to_string(holdout) + " leaves no training samples");
    }
  }
  if (holdout > 0) {
    data.eval.assign(all.end() - static_cast<std::ptrdiff_t>(holdout), all.end());
    all.resize(all.size() - holdout);
    data.train = std::move(all);
  } else {
    data.train = std::move(all);
    data.eval = data.train;
  }
  return data;
}

std::vector<std::size_t> positive_counts(const std::vector<Sample>& samples, std::size_t num_vertices) {
  std::vector<std::size_t> counts(num_vertices, 0);
  for (const auto& s : samples) {
    for (std::size_t v : s.labels.positives) {
      if (v >= num_vertices) throw DataError("positive_counts: vertex id out of range");
      ++counts[v];
    }
  }
  return counts;
}

std::vector<double> contact_weights(const ExperimentConfig& cfg, const std::vector<Sample>& train,
                                    const MeshTopology& mesh) {
  const std::size_t v = mesh.num_vertices();
  if (!cfg.loss.use_phi) return std::vector<double>(v, 1.0);
  auto opts = cfg.loss.balance;
  if (cfg.loss.target_from_dataset) {
    std::vector<ContactLabels> labels;
    for (const auto& s : train) labels.push_back(s.labels);
    const auto report = meshmetrics::imbalance_report(labels, mesh);
    if (report.positive_vertices == 0) throw DataError("class balance: no positive labels in the training split");
    opts.target_mean = report.negative_to_positive_ratio();
  }
  // Vertices never positive in training only ever see the negative term, so
  // their weight is inert. Left in, their 1/ε raw weights would dominate the
  // mean and drive the rescale factor to ~0.
  const auto counts = positive_counts(train, v);
  std::vector<std::size_t> observed, index;
  for (std::size_t i = 0; i < v; ++i) {
    if (counts[i] == 0) continue;
    observed.push_back(counts[i]);
    index.push_back(i);
  }
  if (observed.empty()) throw DataError("class balance: no positive labels in the training split");
  const auto w = losses::class_balance_weights(observed, opts);
  const double fill = *std::max_element(w.phi.begin(), w.phi.end());
  std::vector<double> phi(v, fill);
  for (std::size_t j = 0; j < index.size(); ++j) phi[index[j]] = w.phi[j];
  return phi;
}

SampleLoss sample_loss(const ContactModel& model, const Sample& sample, const MeshTopology& mesh,
                       const std::vector<double>& phi) {
  const auto& cfg = model.config();
  const std::size_t v = mesh.num_vertices();
  const std::size_t s = cfg.encoder.image_size;
  const auto out = model.forward(nd::DiffArray::constant({s, s, 3}, sample.image));
  const auto& w = cfg.loss.weights;

  SampleLoss loss;
  const auto labels = sample.labels.dense(v);
  loss.parts.contact = losses::weighted_bce(out.prediction.contact_prob, labels, phi);
  if ((w.w_pal > 0.0 || w.w_s > 0.0 || w.w_p > 0.0) && !sample.has_annotations) {
    throw DataError("sample '" + sample.image_id + "' lacks the 2D annotations needed by L_pal/L_s/L_p");
  }
  if (w.w_pal > 0.0) {
    const std::vector<losses::Vec3> positions(mesh.vertices.begin(), mesh.vertices.end());
    loss.parts.pal = losses::pixel_anchor_loss(out.prediction.contact_prob, positions, sample.camera, sample.gt_2d);
  }
  if (w.w_s > 0.0) loss.parts.scene = losses::seg_ce(out.scene_seg, sample.scene_mask);
  if (w.w_p > 0.0) loss.parts.part = losses::seg_ce(out.part_seg, sample.part_mask);
  loss.total = losses::composite_loss(loss.parts, w);

  if (cfg.loss.w_sem > 0.0) {
    std::vector<bool> mask(v, true);
    if (cfg.loss.semantic_mask == SemanticMask::contact) {
      for (std::size_t i = 0; i < v; ++i) mask[i] = labels[i] > 0.5;
    }
    loss.semantic = losses::semantic_ce(out.prediction.semantic_logits, sample.labels.dense_semantic(v), mask);
    loss.total = nd::add(loss.total, nd::scale(loss.semantic, cfg.loss.w_sem));
  }
  return loss;
}

namespace {

double value_or_zero(const nd::DiffArray& a) { return a.defined() ? a.item() : 0.0; }

void dump_batch(const fs::path& dir, std::size_t step, const std::vector<const Sample*>& batch,
                const std::vector<LossRecord>& per_sample) {
  nlohmann::json doc = {{"step", step}, {"samples", nlohmann::json::array()}};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nlohmann::json entry = {{"image_id", batch[i]->image_id}, {"positives", batch[i]->labels.positives.size()}};
    // Samples after the one that failed have no losses yet.
    if (i < per_sample.size()) {
      const auto& r = per_sample[i];
      auto fmt = [](double x) { return meshmetrics::format_number(x); };
      entry.update({{"L_c", fmt(r.contact)},
                    {"L_pal", fmt(r.pal)},
                    {"L_s", fmt(r.scene)},
                    {"L_p", fmt(r.part)},
                    {"L_sem", fmt(r.semantic)},
                    {"total", fmt(r.total)}});
    }
    doc["samples"].push_back(std::move(entry));
  }
  fs::create_directories(dir);
  std::ofstream(dir / "nonfinite_batch.json") << doc.dump(2) << '\n';
}

}  // namespace

TrainResult train(ContactModel& model, const std::vector<Sample>& samples, const MeshTopology& mesh,
                  const TrainOptions& opts) {
  const auto& cfg = model.config();
  if (samples.empty()) throw DataError("train: no training samples");
  if (mesh.num_vertices() != cfg.heads.vertices) {
    throw DataError("train: mesh has " + std::to_string(mesh.num_vertices()) + " vertices, model predicts " +
                    std::to_string(cfg.heads.vertices));
  }
  TrainResult result;
  result.phi = contact_weights(cfg, samples, mesh);

  std::vector<nd::DiffArray> params;
  for (const auto& name : model.params().trainable_names()) params.push_back(model.params().get(name));
  std::vector<std::vector<double>> velocity(params.size()), second(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(params[i].size(), 0.0);
    if (cfg.optimizer.kind == OptimizerKind::adam) second[i].assign(params[i].size(), 0.0);
  }

  Rng order_rng = Rng(cfg.optimizer.seed).split(3);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::set<std::string> seen_warnings;
  const std::size_t batch_size = std::min(cfg.optimizer.batch_size, samples.size());
  const double lr = cfg.optimizer.learning_rate, mu = cfg.optimizer.momentum;

  for (std::size_t step = 0; step < cfg.optimizer.steps; ++step) {
    std::vector<const Sample*> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        order.resize(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(&samples[order[cursor++]]);
    }

    nd::DiffArray total;
    LossRecord rec;
    rec.step = step;
    std::vector<LossRecord> per_sample;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Sample* s : batch) {
      SampleLoss l;
      try {
        l = sample_loss(model, *s, mesh, result.phi);
      } catch (const NumericError& e) {
        if (opts.dump_dir) dump_batch(*opts.dump_dir, step, batch, per_sample);
        throw NumericError("train: step " + std::to_string(step) + ", sample '" + s->image_id + "': " + e.what());
      }
      LossRecord r{step,
                   value_or_zero(l.parts.contact),
                   value_or_zero(l.parts.pal),
                   value_or_zero(l.parts.scene),
                   value_or_zero(l.parts.part),
                   l.total.item(),
                   value_or_zero(l.semantic)};
      per_sample.push_back(r);
      rec.contact += inv * r.contact;
      rec.pal += inv * r.pal;
      rec.scene += inv * r.scene;
      rec.part += inv * r.part;
      rec.semantic += inv * r.semantic;
      auto term = nd::scale(l.total, inv);
      total = total.defined() ? nd::add(total, term) : term;
    }
    rec.total = total.item();
    for (auto& w : take_warnings()) {
      if (seen_warnings.insert(w).second) result.warnings.push_back(std::move(w));
    }
    if (!std::isfinite(rec.total)) {
      if (opts.dump_dir) dump_batch(*opts.dump_dir, step, batch, per_sample);
      std::string ids;
      for (const Sample* s : batch) ids += (ids.empty() ? "" : ",") + s->image_id;
      throw NumericError("train: non-finite loss at step " + std::to_string(step) + " on batch [" + ids + "]");
    }
    result.curve.push_back(rec);
    if (opts.on_step) opts.on_step(rec);

    if (lr == 0.0) continue;
    for (auto& p : params) p.zero_grad();
    total.backward();
    double factor = 1.0;
    if (cfg.optimizer.grad_clip) {
      double sq = 0.0;
      for (const auto& p : params)
        for (double g : p.grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > *cfg.optimizer.grad_clip) factor = *cfg.optimizer.grad_clip / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = params[i].grad();
      if (g.empty()) continue;
      auto values = params[i].mutable_values();
      auto& vel = velocity[i];
      if (cfg.optimizer.kind == OptimizerKind::sgd) {
        for (std::size_t j = 0; j < values.size(); ++j) {
          vel[j] = mu * vel[j] + factor * g[j];
          values[j] -= lr * vel[j];
        }
        continue;
      }
      auto& sq = second[i];
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(mu, t), c2 = 1.0 - std::pow(kAdamBeta2, t);
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double gj = factor * g[j];
        vel[j] = mu * vel[j] + (1.0 - mu) * gj;
        sq[j] = kAdamBeta2 * sq[j] + (1.0 - kAdamBeta2) * gj * gj;
        values[j] -= lr * (vel[j] / c1) / (std::sqrt(sq[j] / c2) + kAdamEpsilon);
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

void write_loss_curve(const fs::path& path, const std::vector<LossRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  using meshmetrics::format_number;
  out << "step,L_c,L_pal,L_s,L_p,total,L_sem\n";
  for (const auto& r : curve) {
    out << r.step << ',' << format_number(r.contact) << ',' << format_number(r.pal) << ','
        << format_number(r.scene) << ',' << format_number(r.part) << ',' << format_number(r.total) << ','
        << format_number(r.semantic) << '\n';
  }
}

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("CONTACTLAB_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
    warn("CONTACTLAB_THREADS='" + std::string(env) + "' ignored");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<Prediction> predict(const ContactModel& model, const std::vector<Sample>& samples,
                                const ForwardOptions& opts, std::size_t threads) {
  const std::size_t s = model.config().encoder.image_size;
  std::vector<Prediction> preds(samples.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      const auto out = model.forward(nd::DiffArray::constant({s, s, 3}, samples[i].image), opts);
      preds[i] = {samples[i].image_id, out.prediction.contact_prob.to_vector(),
                  out.prediction.semantic_argmax()};
    }
  };
  if (threads == 0) threads = evaluation_threads();
  threads = std::min(threads, std::max<std::size_t>(samples.size(), 1));
  if (threads <= 1) {
    work();
    return preds;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  pool.clear();
  return preds;
}

GroupRecall group_recall(const std::vector<Prediction>& preds, const std::vector<Sample>& samples,
                         const MeshTopology& mesh, const std::vector<std::size_t>& parts, double threshold) {
  std::vector<bool> in_group(meshmetrics::kBodyParts, false);
  for (std::size_t p : parts) in_group.at(p) = true;
  GroupRecall r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t v : samples[i].labels.positives) {
      if (!in_group[static_cast<std::size_t>(mesh.part_id[v])]) continue;
      if (preds[i].contact[v] >= threshold) ++r.tp;
      else ++r.fn;
    }
  }
  return r;
}

std::vector<std::size_t> rare_parts(const meshmetrics::ImbalanceReport& report, double max_frequency) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < meshmetrics::kBodyParts; ++k)
    if (report.part_frequency(k) <= max_frequency) out.push_back(k);
  return out;
}

Evaluation evaluate_predictions(std::vector<Prediction> preds, const std::vector<Sample>& samples,
                                const MeshTopology& mesh, double threshold) {
  if (preds.size() != samples.size()) throw DataError("evaluate: prediction count differs from sample count");
  const MeshGraph graph(mesh);
  Evaluation ev;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (preds[i].contact.size() != mesh.num_vertices()) {
      throw DataError("evaluate: prediction for '" + preds[i].image_id + "' has " +
                      std::to_string(preds[i].contact.size()) + " vertices, mesh has " +
                      std::to_string(mesh.num_vertices()));
    }
    ev.reports.push_back(meshmetrics::evaluate_image(preds[i].contact, preds[i].semantic, samples[i].labels,
                                                     mesh, graph, threshold));
  }
  ev.summary = meshmetrics::summarize(ev.reports);
  ev.predictions = std::move(preds);
  return ev;
}

Evaluation evaluate(const ContactModel& model, const std::vector<Sample>& samples, const MeshTopology& mesh,
                    const ForwardOptions& opts) {
  if (mesh.num_vertices() != model.config().heads.vertices) {
    throw DataError("evaluate: mesh has " + std::to_string(mesh.num_vertices()) + " vertices, model predicts " +
                    std::to_string(model.config().heads.vertices));
  }
  return evaluate_predictions(predict(model, samples, opts), samples, mesh, model.config().threshold);
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : preds) {
    out << nlohmann::json{{"image_id", p.image_id}, {"contact", p.contact}, {"semantic", p.semantic}}.dump()
        << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data, const TrainOptions& opts) {
  ContactModel model(cfg);
  ExperimentResult r;
  r.training = train(model, data.train, data.mesh, opts);
  r.evaluation = evaluate(model, data.eval, data.mesh);
  return r;
}

}  // namespace contactlab::harness
