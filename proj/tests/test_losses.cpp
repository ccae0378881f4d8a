#include <doctest.h>

#include <cmath>
#include <limits>

#include "contactlab/errors.hpp"
#include "contactlab/losses.hpp"
#include "gradcheck.hpp"

using namespace contactlab;
using namespace contactlab::losses;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

TEST_CASE("effective-number weights at the boundary counts") {
  CHECK(std::abs(effective_weight(1, 0.99, 1e-8) - 1.0 / (1.0 + 1e-8)) <= 1e-12);
  CHECK(effective_weight(0, 0.99, 1e-8) == doctest::Approx(1e8).epsilon(1e-15));
  const double big = effective_weight(10000, 0.99, 1e-8);
  CHECK((big >= 0.0099 && big <= 0.0101));
  CHECK(kDefaultBeta == 0.99);
  CHECK(kDefaultEpsilon == 1e-8);
  CHECK(kDamonTargetMean == 6.451);
}

TEST_CASE("weights never increase with the count") {
  for (double beta : {0.9, 0.99, 0.999}) {
    double prev = kInf;
    for (std::size_t n = 0; n <= 10000; ++n) {
      const double w = effective_weight(n, beta, 1e-8);
      CHECK(w <= prev);
      prev = w;
    }
  }
}

TEST_CASE("rescaled weights hit the target mean for random count vectors") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::size_t> counts(1 + rng.below(200));
    for (auto& n : counts) n = rng.bernoulli(0.2) ? 0 : rng.below(5000);
    counts[0] = 1 + counts[0];
    ClassBalanceOptions opts;
    opts.clip_max = kInf;
    opts.target_mean = rng.uniform(0.5, 20.0);
    const auto w = class_balance_weights(counts, opts);
    CHECK(std::abs(mean(w.phi) - opts.target_mean) <= 1e-6 * opts.target_mean);
    for (std::size_t i = 0; i < counts.size(); ++i) CHECK(w.phi[i] == doctest::Approx(w.scale * w.phi_raw[i]));
  }
}

TEST_CASE("clipping is alternated with rescaling until the mean settles") {
  std::vector<std::size_t> counts(100, 500);
  counts[0] = 1;
  ClassBalanceOptions opts;
  opts.clip_max = 20.0;
  const auto w = class_balance_weights(counts, opts);
  CHECK(std::abs(mean(w.phi) - 6.451) <= 1e-6);
  CHECK(w.phi[0] == 20.0);
  for (double x : w.phi) CHECK(x <= 20.0);
  CHECK(ClassBalanceOptions{}.resolved_clip() == doctest::Approx(50 * 6.451));
}

TEST_CASE("class balance argument checks") {
  std::vector<std::size_t> none(4, 0), some{1, 2};
  CHECK_THROWS_AS(class_balance_weights(none), DataError);
  ClassBalanceOptions bad;
  bad.beta = 1.0;
  CHECK_THROWS_AS(class_balance_weights(some, bad), ConfigError);
}

TEST_CASE("weighted BCE matches the per-vertex formula") {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    const std::size_t v = 1 + rng.below(10);
    std::vector<double> p(v), y(v), phi(v);
    double expect = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      p[i] = rng.uniform(0.01, 0.99), y[i] = rng.bernoulli(0.5), phi[i] = rng.uniform(0, 5);
      expect -= phi[i] * y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
    }
    expect /= double(v);
    CHECK(weighted_bce(nd::DiffArray::constant({v}, p), y, phi).item() == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("BCE clamps saturated probabilities and warns") {
  take_warnings();
  const auto l = bce(nd::DiffArray::constant({2}, {0.0, 1.0}), std::vector<double>{1.0, 0.0});
  CHECK(std::isfinite(l.item()));
  CHECK(l.item() == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
  CHECK_FALSE(take_warnings().empty());
}

TEST_CASE("semantic cross-entropy averages over the active vertices") {
  const auto logits = nd::DiffArray::constant({3, 2}, {0, 0, 5, 0, 0, 5});
  const std::vector<int> targets{0, 1, 1};
  const double l0 = std::log(2.0), l1 = std::log(1 + std::exp(5.0)), l2 = std::log(1 + std::exp(-5.0));
  CHECK(semantic_ce(logits, targets, {true, true, true}).item() == doctest::Approx((l0 + l1 + l2) / 3));
  CHECK(semantic_ce(logits, targets, {false, true, false}).item() == doctest::Approx(l1));
  CHECK_THROWS_AS(semantic_ce(logits, std::vector<int>{0, 2, 0}, {true, true, true}), Error);
}

TEST_CASE("segmentation cross-entropy") {
  const heads::SegmentationMap m{nd::DiffArray::constant({2, 3}, {0, 0, 0, 1, 2, 3}), heads::SegKind::scene};
  const double expect = (std::log(3.0) + (std::log(std::exp(1) + std::exp(2) + std::exp(3)) - 3)) / 2;
  CHECK(seg_ce(m, std::vector<int>{1, 2}).item() == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("projection rounds to the nearest cell and drops off-map vertices") {
  const std::vector<Vec3> v{{0, 0, 0}, {0.26, -0.24, 5}, {1, 0, 0}, {-1, 0, 0}};
  const auto cells = project_vertices(v, {2.0, 1.0, 1.0}, 3, 3);
  CHECK(cells[0] == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK(cells[1] == std::pair<std::size_t, std::size_t>{1, 2});  // u = 1.52, v = 0.52
  CHECK_FALSE(cells[2].has_value());
  CHECK_FALSE(cells[3].has_value());
}

TEST_CASE("pixel-anchor loss takes the most confident vertex per occupied cell") {
  // Vertices 0 and 1 share cell (0,0); vertex 2 lands in (0,1); vertex 3 is off the map.
  const std::vector<Vec3> v{{0, 0, 0}, {0.1, 0.1, 0}, {1, 0, 0}, {9, 9, 0}};
  const Camera cam{1.0, 0.0, 0.0};
  const ContactMap2D gt{2, 2, {1, 0, 0, 0}};
  const auto p = nd::DiffArray::constant({4}, {0.3, 0.6, 0.2, 0.9});
  const double expect = -(std::log(0.6) + std::log(0.8)) / 2;
  CHECK(pixel_anchor_loss(p, v, cam, gt).item() == doctest::Approx(expect).epsilon(1e-13));
  const std::vector<Vec3> far{{9, 9, 0}};
  CHECK_THROWS_AS(pixel_anchor_loss(nd::DiffArray::constant({1}, {0.5}), far, cam, gt), DataError);
}

TEST_CASE("splatting marks the cells of positive vertices") {
  const std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const auto m = splat_labels(std::vector<double>{1, 0, 1}, v, {1.0, 0.0, 0.0}, 2, 2);
  CHECK(m.cells == std::vector<std::uint8_t>{1, 0, 1, 0});
  CHECK_THROWS_AS(project_vertices(v, {0.0, 0.0, 0.0}, 2, 2), ConfigError);
}

TEST_CASE("the composite loss is the weighted sum of its terms") {
  const LossParts parts{nd::DiffArray::scalar(1.0), nd::DiffArray::scalar(2.0), nd::DiffArray::scalar(3.0),
                        nd::DiffArray::scalar(4.0)};
  CHECK(composite_loss(parts, {}).item() == doctest::Approx(1.0 + 0.5 * 2 + 0.1 * 3 + 0.1 * 4));
  CHECK(composite_loss({nd::DiffArray::scalar(2.0), {}, {}, {}}, {1.0, 0.0, 0.0, 0.0}).item() == 2.0);
  CHECK_THROWS_AS(composite_loss(parts, {0.0, 0.0, 0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(composite_loss(parts, {-1.0, 0.0, 0.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(composite_loss({nd::DiffArray::zeros({2}), {}, {}, {}}, {1.0, 0.0, 0.0, 0.0}), DimensionError);
}

