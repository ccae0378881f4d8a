#include "contactlab/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "contactlab/errors.hpp"

namespace contactlab::harness {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void read(const char* key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(key, "a nonnegative integer");
    out = v.get<std::size_t>();
  }
  void read(const char* key, double& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number()) fail(key, "a number");
    out = v.get<double>();
  }
  void read(const char* key, bool& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_boolean()) fail(key, "a boolean");
    out = v.get<bool>();
  }
  void read(const char* key, std::string& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_string()) fail(key, "a string");
    out = v.get<std::string>();
  }
  template <class T>
  void read(const char* key, std::optional<T>& out) {
    if (!has(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    T tmp{};
    read(key, tmp);
    out = tmp;
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("config: unknown key '" + name_ + "." + key + "'");
    }
  }

  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config: '" + name_ + "." + key + "' must be " + what);
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

PartPlan plan_from_json(const json& j) {
  Section s(j, "dataset.plan");
  PartPlan plan = PartPlan::desk_default();
  if (s.has("rates")) {
    const auto& r = s.raw("rates");
    if (!r.is_array() || r.size() != meshmetrics::kBodyParts) {
      throw ConfigError("config: 'dataset.plan.rates' must list 24 numbers");
    }
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (!r[k].is_number()) throw ConfigError("config: plan rates must be numbers");
      plan.rates[k] = r[k].get<double>();
    }
  } else {
    double def = 0.05;
    s.read("default", def);
    plan = PartPlan::uniform(def);
    if (s.has("parts")) {
      const auto& parts = s.raw("parts");
      if (!parts.is_object()) throw ConfigError("config: 'dataset.plan.parts' must be an object");
      for (const auto& [name, rate] : parts.items()) {
        if (!rate.is_number()) throw ConfigError("config: plan rate for '" + name + "' must be a number");
        for (std::size_t k : part_group(name)) plan.rates[k] = rate.get<double>();
      }
    }
  }
  s.done();
  return plan;
}

template <class E>
E parse_enum(const std::string& value, const char* key,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(std::string("config: '") + key + "' must be one of " + names + ", got '" + value + "'");
}

}  // namespace

const char* pooling_name(PoolingMode m) { return m == PoolingMode::attention ? "attention" : "mean"; }

const char* fusion_mode_name(fusion::FusionMode m) {
  return m == fusion::FusionMode::patch ? "patch" : "global";
}

void ExperimentConfig::validate() const {
  encoder.validate();
  heads.validate();
  if (lora.rank == 0 || !(lora.alpha > 0.0)) throw ConfigError("config: lora rank and alpha must be positive");
  if (fusion.heads == 0 || encoder.embed_dim % fusion.heads != 0) {
    throw ConfigError("config: fusion.heads must divide encoder.embed_dim");
  }
  if (fusion.scale && !(*fusion.scale > 0.0)) throw ConfigError("config: fusion.scale must be positive");
  if (fusion.zero_out_k && *fusion.zero_out_k > encoder.embed_dim) {
    throw ConfigError("config: fusion.zero_out_k exceeds embed_dim");
  }
  loss.weights.validate();
  if (!(loss.w_sem >= 0.0) || !std::isfinite(loss.w_sem)) throw ConfigError("config: loss.w_sem must be >= 0");
  if (!(loss.balance.beta > 0.0 && loss.balance.beta < 1.0)) throw ConfigError("config: loss.beta must lie in (0,1)");
  if (!(loss.balance.epsilon > 0.0)) throw ConfigError("config: loss.epsilon must be positive");
  if (!(loss.balance.target_mean > 0.0)) throw ConfigError("config: loss.target_mean must be positive");
  if (loss.balance.clip_max && !(*loss.balance.clip_max > 0.0)) {
    throw ConfigError("config: loss.clip_max must be positive");
  }
  if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("config: optimizer.learning_rate must be >= 0");
  }
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw ConfigError("config: optimizer.momentum must lie in [0,1)");
  }
  if (optimizer.grad_clip && !(*optimizer.grad_clip > 0.0)) {
    throw ConfigError("config: optimizer.grad_clip must be positive");
  }
  if (optimizer.batch_size == 0) throw ConfigError("config: optimizer.batch_size must be positive");
  if (dataset.source == DatasetConfig::Source::synthetic) {
    dataset.plan.validate();
    if (dataset.n == 0) throw ConfigError("config: dataset.n must be positive");
    if (heads.scene_classes < heads.semantic_classes) {
      throw ConfigError("config: synthetic scene masks need scene_classes >= semantic_classes");
    }
  } else if (dataset.path.empty()) {
    throw ConfigError("config: directory datasets need a path");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("config: threshold must lie in (0,1)");
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  optimizer.seed = seed;
  dataset.seed = seed;
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  Section top(doc, "config");
  if (top.has("encoder")) {
    Section s(top.raw("encoder"), "encoder");
    s.read("image_size", cfg.encoder.image_size);
    s.read("patch_size", cfg.encoder.patch_size);
    s.read("embed_dim", cfg.encoder.embed_dim);
    s.read("depth", cfg.encoder.depth);
    s.read("heads", cfg.encoder.heads);
    s.read("mlp_ratio", cfg.encoder.mlp_ratio);
    s.read("shared_branches", cfg.encoder.shared_branches);
    s.done();
  }
  if (top.has("lora")) {
    Section s(top.raw("lora"), "lora");
    s.read("enabled", cfg.lora.enabled);
    s.read("rank", cfg.lora.rank);
    s.read("alpha", cfg.lora.alpha);
    s.done();
  }
  if (top.has("fusion")) {
    Section s(top.raw("fusion"), "fusion");
    std::string mode = fusion_mode_name(cfg.fusion.mode);
    s.read("mode", mode);
    cfg.fusion.mode = parse_enum<fusion::FusionMode>(
        mode, "fusion.mode", {{"patch", fusion::FusionMode::patch}, {"global", fusion::FusionMode::global}});
    s.read("heads", cfg.fusion.heads);
    s.read("scale", cfg.fusion.scale);
    s.read("zero_out_k", cfg.fusion.zero_out_k);
    s.done();
  }
  if (top.has("pooling")) {
    const auto& p = top.raw("pooling");
    if (!p.is_string()) throw ConfigError("config: 'pooling' must be a string");
    cfg.pooling = parse_enum<PoolingMode>(p.get<std::string>(), "pooling",
                                          {{"attention", PoolingMode::attention}, {"mean", PoolingMode::mean}});
  }
  if (top.has("heads")) {
    Section s(top.raw("heads"), "heads");
    s.read("vertices", cfg.heads.vertices);
    s.read("semantic_classes", cfg.heads.semantic_classes);
    s.read("scene_classes", cfg.heads.scene_classes);
    s.read("contact_hidden", cfg.heads.contact_hidden);
    s.read("vertex_dim", cfg.heads.vertex_dim);
    s.read("semantic_hidden", cfg.heads.semantic_hidden);
    s.done();
  }
  if (top.has("loss")) {
    Section s(top.raw("loss"), "loss");
    s.read("w_c", cfg.loss.weights.w_c);
    s.read("w_pal", cfg.loss.weights.w_pal);
    s.read("w_s", cfg.loss.weights.w_s);
    s.read("w_p", cfg.loss.weights.w_p);
    s.read("w_sem", cfg.loss.w_sem);
    s.read("use_phi", cfg.loss.use_phi);
    s.read("beta", cfg.loss.balance.beta);
    s.read("epsilon", cfg.loss.balance.epsilon);
    if (s.has("target_mean")) {
      const auto& t = s.raw("target_mean");
      if (t.is_string() && t.get<std::string>() == "dataset") {
        cfg.loss.target_from_dataset = true;
      } else if (t.is_number()) {
        cfg.loss.balance.target_mean = t.get<double>();
      } else {
        throw ConfigError("config: 'loss.target_mean' must be a number or \"dataset\"");
      }
    }
    if (s.has("clip_max")) {
      const auto& c = s.raw("clip_max");
      if (c.is_null() || (c.is_string() && c.get<std::string>() == "none")) {
        cfg.loss.balance.clip_max = std::numeric_limits<double>::infinity();
      } else if (c.is_number()) {
        cfg.loss.balance.clip_max = c.get<double>();
      } else {
        throw ConfigError("config: 'loss.clip_max' must be a number or null");
      }
    }
    std::string mask = "contact";
    s.read("semantic_mask", mask);
    cfg.loss.semantic_mask = parse_enum<SemanticMask>(
        mask, "loss.semantic_mask", {{"contact", SemanticMask::contact}, {"all", SemanticMask::all}});
    s.done();
  }
  if (top.has("optimizer")) {
    Section s(top.raw("optimizer"), "optimizer");
    std::string kind = cfg.optimizer.kind == OptimizerKind::sgd ? "sgd" : "adam";
    s.read("kind", kind);
    cfg.optimizer.kind =
        parse_enum<OptimizerKind>(kind, "optimizer.kind", {{"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}});
    s.read("learning_rate", cfg.optimizer.learning_rate);
    s.read("momentum", cfg.optimizer.momentum);
    s.read("grad_clip", cfg.optimizer.grad_clip);
    s.read("steps", cfg.optimizer.steps);
    s.read("batch_size", cfg.optimizer.batch_size);
    std::size_t seed = cfg.optimizer.seed;
    s.read("seed", seed);
    cfg.optimizer.seed = seed;
    s.done();
  }
  if (top.has("dataset")) {
    Section s(top.raw("dataset"), "dataset");
    std::string source = "synthetic";
    s.read("source", source);
    cfg.dataset.source = parse_enum<DatasetConfig::Source>(
        source, "dataset.source",
        {{"synthetic", DatasetConfig::Source::synthetic}, {"directory", DatasetConfig::Source::directory}});
    s.read("n", cfg.dataset.n);
    s.read("holdout", cfg.dataset.holdout);
    std::size_t seed = cfg.dataset.seed;
    s.read("seed", seed);
    cfg.dataset.seed = seed;
    if (s.has("plan")) cfg.dataset.plan = plan_from_json(s.raw("plan"));
    std::string path;
    s.read("path", path);
    cfg.dataset.path = path;
    s.done();
  }
  top.read("threshold", cfg.threshold);
  if (top.has("checkpoint")) {
    std::string path;
    top.read("checkpoint", path);
    cfg.checkpoint = path;
  }
  top.done();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  auto opt = [](const auto& o) -> json { return o ? json(*o) : json(nullptr); };
  json rates = json::array();
  for (double r : cfg.dataset.plan.rates) rates.push_back(r);
  json loss = {{"w_c", cfg.loss.weights.w_c},
               {"w_pal", cfg.loss.weights.w_pal},
               {"w_s", cfg.loss.weights.w_s},
               {"w_p", cfg.loss.weights.w_p},
               {"w_sem", cfg.loss.w_sem},
               {"use_phi", cfg.loss.use_phi},
               {"beta", cfg.loss.balance.beta},
               {"epsilon", cfg.loss.balance.epsilon},
               {"semantic_mask", cfg.loss.semantic_mask == SemanticMask::contact ? "contact" : "all"}};
  loss["target_mean"] = cfg.loss.target_from_dataset ? json("dataset") : json(cfg.loss.balance.target_mean);
  if (cfg.loss.balance.clip_max) {
    loss["clip_max"] = std::isinf(*cfg.loss.balance.clip_max) ? json(nullptr) : json(*cfg.loss.balance.clip_max);
  }
  json dataset = {{"source", cfg.dataset.source == DatasetConfig::Source::synthetic ? "synthetic" : "directory"}};
  if (cfg.dataset.source == DatasetConfig::Source::synthetic) {
    dataset["n"] = cfg.dataset.n;
    dataset["holdout"] = cfg.dataset.holdout;
    dataset["seed"] = cfg.dataset.seed;
    dataset["plan"] = {{"rates", rates}};
  } else {
    dataset["path"] = cfg.dataset.path.string();
  }
  json doc = {
      {"encoder",
       {{"image_size", cfg.encoder.image_size},
        {"patch_size", cfg.encoder.patch_size},
        {"embed_dim", cfg.encoder.embed_dim},
        {"depth", cfg.encoder.depth},
        {"heads", cfg.encoder.heads},
        {"mlp_ratio", cfg.encoder.mlp_ratio},
        {"shared_branches", cfg.encoder.shared_branches}}},
      {"lora", {{"enabled", cfg.lora.enabled}, {"rank", cfg.lora.rank}, {"alpha", cfg.lora.alpha}}},
      {"fusion",
       {{"mode", fusion_mode_name(cfg.fusion.mode)},
        {"heads", cfg.fusion.heads},
        {"scale", opt(cfg.fusion.scale)},
        {"zero_out_k", opt(cfg.fusion.zero_out_k)}}},
      {"pooling", pooling_name(cfg.pooling)},
      {"heads",
       {{"vertices", cfg.heads.vertices},
        {"semantic_classes", cfg.heads.semantic_classes},
        {"scene_classes", cfg.heads.scene_classes},
        {"contact_hidden", cfg.heads.contact_hidden},
        {"vertex_dim", cfg.heads.vertex_dim},
        {"semantic_hidden", cfg.heads.semantic_hidden}}},
      {"loss", std::move(loss)},
      {"optimizer",
       {{"kind", cfg.optimizer.kind == OptimizerKind::sgd ? "sgd" : "adam"},
        {"learning_rate", cfg.optimizer.learning_rate},
        {"momentum", cfg.optimizer.momentum},
        {"grad_clip", opt(cfg.optimizer.grad_clip)},
        {"steps", cfg.optimizer.steps},
        {"batch_size", cfg.optimizer.batch_size},
        {"seed", cfg.optimizer.seed}}},
      {"dataset", std::move(dataset)},
      {"threshold", cfg.threshold}};
  if (cfg.checkpoint) doc["checkpoint"] = cfg.checkpoint->string();
  return doc;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = config_from_json(doc);
  if (cfg.dataset.source == DatasetConfig::Source::directory && cfg.dataset.path.is_relative()) {
    cfg.dataset.path = path.parent_path() / cfg.dataset.path;
  }
  return cfg;
}

}  // namespace contactlab::harness
