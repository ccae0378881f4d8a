// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance OUT_DIR [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "contactlab/checkpoint.hpp"
#include "contactlab/fusion.hpp"
#include "contactlab/harness/cli.hpp"
#include "contactlab/harness/experiment.hpp"
#include "contactlab/losses.hpp"
#include "contactlab/meshmetrics.hpp"
#include "contactlab/ssl.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace contactlab;
using namespace contactlab::harness;
namespace fs = std::filesystem;
namespace mm = contactlab::meshmetrics;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_out;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// 1
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  constexpr int kInstances = 20;
  double worst = 0.0;
  std::string worst_case;
  std::size_t failures = 0, cases = 0;
  for (const auto& c : testsupport::gradient_cases()) {
    Rng rng = Rng(2024).split(cases++);
    for (int i = 0; i < kInstances; ++i) {
      const double err = c.instance(rng);
      if (!(err <= testsupport::kGradTolerance)) {
        ++failures;
        std::cerr << "  gradient " << c.name << " instance " << i << ": relative error " << err << '\n';
      }
      if (!(err <= worst)) worst = err, worst_case = c.name;
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0, std::to_string(cases) + " ops x " + std::to_string(kInstances) +
                                            " instances, worst rel err " + fmt(worst, 3) + " (" + worst_case +
                                            "), " + fmt(secs, 3) + " s"};
}

// 2
Outcome phi_formula() {
  using losses::effective_weight;
  bool ok = true;
  std::string why;
  auto require = [&](bool c, const std::string& what) {
    if (!c && ok) why = what;
    ok = ok && c;
  };
  const double beta = 0.99, eps = 1e-8;
  require(std::abs(effective_weight(1, beta, eps) - 1.0 / (1.0 + 1e-8)) <= 1e-12, "n=1");
  const double n0 = effective_weight(0, beta, eps);
  require(std::abs(n0 - 1e8) <= 1e8 * 1e-15, "n=0");
  const double big = effective_weight(10000, beta, eps);
  require(big >= 0.0099 && big <= 0.0101, "n=1e4");

  // the pre-clip raw weight of an unseen vertex stays 1e8 inside the full pipeline
  losses::ClassBalanceOptions unclipped;
  unclipped.clip_max = std::numeric_limits<double>::infinity();
  const std::vector<std::size_t> with_zero{0, 1, 5, 40};
  require(class_balance_weights(with_zero, unclipped).phi_raw[0] == n0, "n=0 in pipeline");

  Rng rng(7);
  double worst_mean = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> counts(1 + rng.below(700));
    for (auto& c : counts) c = rng.bernoulli(0.1) ? 0 : rng.below(200);
    const auto w = class_balance_weights(counts, unclipped);
    double mean = 0.0;
    for (double x : w.phi) mean += x;
    mean /= double(w.phi.size());
    worst_mean = std::max(worst_mean, std::abs(mean - 6.451));
  }
  require(worst_mean <= 1e-6, "rescaled mean");

  std::size_t strict_until = 0;
  double prev = effective_weight(0, beta, eps);
  for (std::size_t n = 1; n <= 10000; ++n) {
    const double w = effective_weight(n, beta, eps);
    require(w <= prev, "monotone at n=" + std::to_string(n));
    if (w < prev && strict_until == n - 1) strict_until = n;
    prev = w;
  }
  return {ok, (ok ? std::string() : "failed: " + why + "; ") + "phi(1)=" + fmt(effective_weight(1, beta, eps), 17) +
                  ", phi(0)=" + fmt(n0, 17) + ", phi(1e4)=" + fmt(big, 6) + ", worst |mean-6.451|=" +
                  fmt(worst_mean, 3) + ", non-increasing on 0..1e4 (strict through n=" +
                  std::to_string(strict_until) + ", then 1-b^n rounds to 1)"};
}

// 3
Outcome attention_normalization() {
  Rng rng(31);
  double worst = 0.0;
  bool exact = true;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(40), d = 1 + rng.below(24), m = 1 + rng.below(8);
    const auto p = nd::softmax_rows(testsupport::random_constant({m, n}, rng, -20, 20));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += p.at(i, j);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    const fusion::FeatureMap f{testsupport::random_constant({n, d}, rng, -3, 3), fusion::Branch::scene};
    const fusion::PoolQuery q{testsupport::random_constant({d}, rng, -3, 3)};
    double s = 0.0;
    const auto alpha = fusion::attention_pool_weights(f, q);
    for (double a : alpha.values()) s += a;
    worst = std::max(worst, std::abs(s - 1.0));

    // singleton key/value token
    const std::size_t heads = (d % 2 == 0 && rng.bernoulli(0.5)) ? 2 : 1;
    const fusion::FeatureMap kv{testsupport::random_constant({1, d}, rng, -3, 3), fusion::Branch::scene};
    fusion::AttentionConfig cfg;
    cfg.heads = heads;
    cfg.mode = rng.bernoulli(0.5) ? fusion::FusionMode::patch : fusion::FusionMode::global;
    const auto out = fusion::cross_attend(f, kv, cfg);
    for (std::size_t i = 0; i < out.num_tokens(); ++i)
      for (std::size_t c = 0; c < d; ++c) exact = exact && out.tokens.at(i, c) == kv.tokens.at(0, c);

    // one query token: patch and global agree bit for bit
    const fusion::FeatureMap q1{testsupport::random_constant({1, d}, rng, -3, 3), fusion::Branch::part};
    const fusion::FeatureMap kvs{testsupport::random_constant({n, d}, rng, -3, 3), fusion::Branch::scene};
    fusion::AttentionConfig pc, gc;
    pc.heads = gc.heads = heads;
    pc.mode = fusion::FusionMode::patch;
    gc.mode = fusion::FusionMode::global;
    exact = exact && fusion::cross_attend(q1, kvs, pc).tokens.to_vector() ==
                         fusion::cross_attend(q1, kvs, gc).tokens.to_vector();
  }
  return {worst <= 1e-9 && exact, "100 shapes, worst |sum-1|=" + fmt(worst, 3) +
                                      ", singleton V and N=1 patch/global " + (exact ? "exact" : "NOT exact")};
}

// 4
Outcome geodesic_oracle() {
  const auto t0 = Clock::now();
  Rng rng(41);
  double worst = 0.0;
  bool perfect_zero = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t v = 3 + rng.below(62);
    const auto mesh = testsupport::random_connected_mesh(v, rng);
    const auto all = testsupport::floyd_warshall(mesh);
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < v; ++i)
      if (rng.bernoulli(0.1)) src.push_back(i);
    if (src.empty()) src.push_back(rng.below(v));
    const auto d = mm::geodesic_distances(mesh, src);
    for (std::size_t i = 0; i < v; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (auto s : src) best = std::min(best, all[s][i]);
      worst = std::max(worst, std::abs(d[i] - best));
    }
    mm::ContactLabels gt;
    gt.positives = src;
    const auto err = mm::geodesic_error(gt.dense(v), gt, mm::MeshGraph(mesh));
    perfect_zero = perfect_zero && err.cm == 0.0;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && perfect_zero && secs < 30.0,
          "50 meshes, worst |dijkstra-fw|=" + fmt(worst, 3) + ", perfect prediction error " +
              (perfect_zero ? "0" : "NONZERO") + ", " + fmt(secs, 3) + " s"};
}

// 5
Outcome metric_oracle() {
  Rng rng(51);
  const auto mesh = testsupport::random_connected_mesh(20, rng);
  const mm::MeshGraph graph(mesh);
  std::size_t mismatches = 0;
  auto ratio = [](std::size_t a, std::size_t b) { return b ? double(a) / double(b) : 0.0; };
  auto f1 = [](double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; };
  for (int t = 0; t < 200; ++t) {
    const auto gt = testsupport::random_labels(20, 4, rng);
    std::vector<double> prob(20);
    std::vector<int> cls(20);
    for (std::size_t i = 0; i < 20; ++i) {
      prob[i] = rng.bernoulli(0.1) ? 0.5 : rng.uniform();
      cls[i] = int(rng.below(4));
    }
    const auto c = testsupport::count_by_hand(prob, cls, gt, 0.5);
    const auto r = mm::evaluate_image(prob, cls, gt, mesh, graph, 0.5);
    const double p = ratio(c.tp, c.tp + c.fp), rc = ratio(c.tp, c.tp + c.fn);
    const double sp = ratio(c.sem_tp, c.sem_tp + c.sem_fp), sr = ratio(c.sem_tp, c.sem_tp + c.sem_fn);
    const bool ok = r.confusion == mm::Confusion{c.tp, c.fp, c.fn, c.tn} && r.binary.precision == p &&
                    r.binary.recall == rc && r.binary.f1 == f1(p, rc) &&
                    r.semantic_counts == mm::SemanticCounts{c.sem_tp, c.sem_fp, c.sem_fn} &&
                    r.semantic.precision == sp && r.semantic.recall == sr && r.semantic.f1 == f1(sp, sr);
    mismatches += !ok;
  }
  return {mismatches == 0, "200 cases of 20 vertices, " + std::to_string(mismatches) + " mismatches"};
}

// 6
Outcome lora_contract() {
  ExperimentConfig on, off;
  on.lora.enabled = true;
  off.lora.enabled = false;
  const auto data = prepare_data(on);
  bool identical = true;
  {
    ContactModel a(on), b(off);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto img = nd::DiffArray::constant({56, 56, 3}, data.train[i].image);
      const auto pa = a.forward(img).prediction, pb = b.forward(img).prediction;
      identical = identical && pa.contact_prob.to_vector() == pb.contact_prob.to_vector() &&
                  pa.semantic_logits.to_vector() == pb.semantic_logits.to_vector();
    }
  }
  auto cfg = on;
  cfg.optimizer.steps = 100;
  ContactModel model(cfg);
  const auto before = model.params().snapshot();
  train(model, data.train, data.mesh);
  std::size_t base = 0, base_changed = 0, adapters = 0, adapters_changed = 0;
  for (const auto& [name, p] : model.params().entries()) {
    const bool changed = p.to_vector() != before.at(name);
    if (name.starts_with(kLoraPrefix)) {
      ++adapters;
      adapters_changed += changed;
    } else if (!p.requires_grad()) {
      ++base;
      base_changed += changed;
    }
  }
  return {identical && base > 0 && base_changed == 0 && adapters_changed == adapters,
          std::string("zero-init forward ") + (identical ? "bit-identical" : "DIFFERS") + "; after 100 steps " +
              std::to_string(base_changed) + "/" + std::to_string(base) + " frozen base tensors changed, " +
              std::to_string(adapters_changed) + "/" + std::to_string(adapters) + " adapter tensors changed"};
}

// 7
Outcome ssl_losses() {
  Rng rng(71);
  double worst_entropy = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.below(300);
    std::vector<double> p(k);
    double z = 0.0;
    for (double& x : p) z += (x = std::exp(rng.uniform(-6, 6)));
    for (double& x : p) x /= z;
    const auto a = nd::DiffArray::constant({k}, p);
    worst_entropy = std::max(worst_entropy, std::abs(ssl::dino_loss(a, a).item() - ssl::entropy(p)));
  }

  // 1/K is exactly representable for K = 2^j, so there the uniform
  // distribution itself is exact and the loss must equal ln K bit for bit.
  bool uniform_exact = true;
  for (std::size_t k = 2; k <= (1u << 16); k *= 2) {
    const auto u = nd::DiffArray::full({k}, 1.0 / double(k));
    uniform_exact = uniform_exact && ssl::dino_loss(u, u).item() == std::log(double(k));
  }
  double worst_ulps = 0.0;
  for (std::size_t k : {3u, 5u, 7u, 10u, 100u, 1000u, 4097u}) {
    const auto u = nd::DiffArray::full({k}, 1.0 / double(k));
    const double lk = std::log(double(k));
    const double ulp = std::nextafter(lk, 2 * lk) - lk;
    worst_ulps = std::max(worst_ulps, std::abs(ssl::dino_loss(u, u).item() - lk) / ulp);
  }

  ParamStore student;
  student.add("w", testsupport::random_param({4, 5}, rng));
  student.add("b", testsupport::random_param({5}, rng));
  auto teacher = ssl::TeacherState::mirror(student, 8);
  std::map<std::string, std::vector<double>> t0;
  for (auto& [name, v] : teacher.params) {
    for (double& x : v) x = rng.uniform(-2, 2);
    t0[name] = v;
  }
  const double m = 0.9;
  double worst_ema = 0.0;
  for (int k = 1; k <= 100; ++k) {
    ssl::ema_update(teacher, student, m);
    for (const auto& [name, v] : teacher.params) {
      const auto s = student.get(name).values();
      for (std::size_t i = 0; i < v.size(); ++i)
        worst_ema = std::max(worst_ema, std::abs(v[i] - (s[i] + std::pow(m, k) * (t0[name][i] - s[i]))));
    }
  }
  return {worst_entropy <= 1e-9 && uniform_exact && worst_ema <= 1e-12,
          "worst |dino(p,p)-H(p)|=" + fmt(worst_entropy, 3) + ", uniform = ln K " +
              (uniform_exact ? "exactly" : "NOT exactly") + " for K=2..65536 (other K, where 1/K rounds: " +
              fmt(worst_ulps, 2) + " ulp), worst EMA error " + fmt(worst_ema, 3)};
}

// 8
Outcome overfit_smoke() {
  const auto t0 = Clock::now();
  ::setenv("CONTACTLAB_THREADS", "1", 1);
  const ExperimentConfig cfg;
  const auto data = prepare_data(cfg);
  ContactModel model(cfg);
  const auto tr = train(model, data.train, data.mesh);
  const auto ev = evaluate(model, data.train, data.mesh);
  ::unsetenv("CONTACTLAB_THREADS");
  write_loss_curve(g_out / "overfit_loss_curve.csv", tr.curve);
  const double secs = seconds_since(t0);
  const auto& s = ev.summary;
  return {s.binary.f1 >= 0.95 && s.semantic.recall >= 0.9 && secs < 300.0,
          std::to_string(data.train.size()) + " samples, " + std::to_string(tr.curve.size()) + " steps, F1 " +
              fmt(s.binary.f1) + ", semantic recall " + fmt(s.semantic.recall) + ", geodesic " +
              fmt(s.geodesic_cm) + " cm, " + fmt(secs, 3) + " s on one core"};
}

// 9
Outcome class_balance_effect() {
  ExperimentConfig base;
  base.dataset.plan = PartPlan::uniform(0.05);
  for (auto p : part_group("feet")) base.dataset.plan.rates[p] = 0.8;
  base.dataset.n = 50;
  base.dataset.holdout = 50;
  base.optimizer.steps = 300;
  std::vector<std::size_t> rare, common;
  for (std::size_t k = 0; k < mm::kBodyParts; ++k) (base.dataset.plan.rates[k] < 0.1 ? rare : common).push_back(k);

  std::ofstream csv(g_out / "class_balance_effect.csv");
  csv << "seed,variant,rare_recall,rare_tp,rare_fn,common_recall,precision,recall,f1\n";
  std::ostringstream table;
  table << "  seed   rare recall phi   rare recall no-phi   diff\n";
  double sum_phi = 0.0, sum_plain = 0.0;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  for (auto seed : seeds) {
    auto cfg = base;
    cfg.set_seed(seed);
    const auto data = prepare_data(cfg);
    double recall[2] = {0, 0};
    for (int v = 0; v < 2; ++v) {
      auto c = cfg;
      c.loss.use_phi = v == 0;
      const auto r = run_experiment(c, data);
      const auto& ev = r.evaluation;
      const auto rg = group_recall(ev.predictions, data.eval, data.mesh, rare, c.threshold);
      const auto cg = group_recall(ev.predictions, data.eval, data.mesh, common, c.threshold);
      recall[v] = rg.recall();
      csv << seed << ',' << (v == 0 ? "phi" : "no_phi") << ',' << mm::format_number(rg.recall()) << ',' << rg.tp
          << ',' << rg.fn << ',' << mm::format_number(cg.recall()) << ','
          << mm::format_number(ev.summary.binary.precision) << ',' << mm::format_number(ev.summary.binary.recall)
          << ',' << mm::format_number(ev.summary.binary.f1) << '\n';
    }
    sum_phi += recall[0];
    sum_plain += recall[1];
    char line[128];
    std::snprintf(line, sizeof line, "  %4llu   %15.4f   %18.4f   %+.4f\n", static_cast<unsigned long long>(seed),
                  recall[0], recall[1], recall[0] - recall[1]);
    table << line;
  }
  const double mp = sum_phi / double(seeds.size()), mu = sum_plain / double(seeds.size());
  char line[128];
  std::snprintf(line, sizeof line, "  mean   %15.4f   %18.4f   %+.4f\n", mp, mu, mp - mu);
  table << line;
  std::cout << table.str();
  return {mp >= mu, "mean rare-part recall on held-out images, phi " + fmt(mp) + " vs no-phi " + fmt(mu) +
                        " over 5 seeds (class_balance_effect.csv)"};
}

// 10
Outcome zero_out_ablation() {
  ExperimentConfig cfg;
  cfg.dataset.n = 16;
  cfg.optimizer.steps = 50;
  const auto data = prepare_data(cfg);
  ContactModel model(cfg);
  train(model, data.train, data.mesh);
  const auto plain = predict(model, data.train);
  ForwardOptions full, none;
  full.zero_out_k = cfg.encoder.embed_dim;
  none.zero_out_k = 0;
  const auto kc = predict(model, data.train, full);
  const auto k0 = predict(model, data.train, none);
  bool same = true, constant = true, differs = false;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    same = same && kc[i].contact == plain[i].contact && kc[i].semantic == plain[i].semantic;
    constant = constant && k0[i].contact == k0[0].contact && k0[i].semantic == k0[0].semantic;
    differs = differs || plain[i].contact != plain[0].contact;
  }
  const auto a = evaluate_predictions(plain, data.train, data.mesh, cfg.threshold).summary;
  const auto b = evaluate_predictions(kc, data.train, data.mesh, cfg.threshold).summary;
  same = same && a.binary.f1 == b.binary.f1 && a.geodesic_cm == b.geodesic_cm;
  return {same && constant && differs,
          std::string("K=C ") + (same ? "identical to" : "DIFFERS from") + " unablated; K=0 predictions " +
              (constant ? "constant" : "NOT constant") + " across " + std::to_string(k0.size()) +
              " images (unablated predictions " + (differs ? "vary" : "do not vary") + ")"};
}

// 11
Outcome determinism() {
  nlohmann::json doc = config_to_json(ExperimentConfig{});
  doc["optimizer"]["steps"] = 200;
  const auto root = g_out / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto cfg_path = root / "config.json";
  std::ofstream(cfg_path) << doc.dump(2);
  std::string log;
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "contactlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(int(argv.size()), argv.data(), out, err);
    log += err.str();
    return code;
  };
  for (const char* run : {"a", "b"}) {
    const auto dir = (root / run).string();
    if (cli({"train", "--config", cfg_path.string(), "--seed", "11", "--out", dir}) != 0 ||
        cli({"eval", "--config", cfg_path.string(), "--seed", "11", "--out", dir}) != 0 ||
        cli({"eval", "--config", cfg_path.string(), "--seed", "11", "--out", dir, "--format", "json"}) != 0)
      return {false, "run " + std::string(run) + " failed: " + log};
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::size_t same = 0;
  std::string differing;
  const std::vector<std::string> files{"checkpoint.json", "loss_curve.csv", "report.csv", "report.json",
                                       "predictions.jsonl", "config.json"};
  for (const auto& f : files) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (!a.empty() && a == b) ++same;
    else differing += " " + f;
  }
  return {same == files.size(), std::to_string(same) + "/" + std::to_string(files.size()) +
                                    " artifacts byte-identical across two train+eval runs" +
                                    (differing.empty() ? "" : "; differing:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
  g_out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(g_out);
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"class-balance weight formula", phi_formula},
      {"attention normalization", attention_normalization},
      {"geodesic oracle", geodesic_oracle},
      {"metric oracle", metric_oracle},
      {"LoRA contract", lora_contract},
      {"SSL losses", ssl_losses},
      {"overfit smoke test", overfit_smoke},
      {"class-balance effect", class_balance_effect},
      {"zero-out ablation", zero_out_ablation},
      {"determinism", determinism},
  };
  int failed = 0;
  std::ofstream summary(g_out / "acceptance.txt");
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + "  " + std::to_string(id) + ". " +
                             criteria[i].first + ": " + o.detail;
    std::cout << line << std::endl;
    summary << line << '\n';
  }
  return failed == 0 ? 0 : 1;
}
