#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "storm/losses.hpp"

using namespace storm::loss;
using storm::Mat;
using storm::Rng;

namespace {

/// Hard grid with the given confusion counts, one pixel per count.
void fill_counts(Mat<double>& p, Mat<double>& t, int tp, int fn, int fp, int tn) {
  REQUIRE(tp + fn + fp + tn == static_cast<int>(p.data.size()));
  std::size_t i = 0;
  for (int k = 0; k < tp; ++k, ++i) {
    p.data[i] = 1;
    t.data[i] = 1;
  }
  for (int k = 0; k < fn; ++k, ++i) {
    p.data[i] = 0;
    t.data[i] = 1;
  }
  for (int k = 0; k < fp; ++k, ++i) {
    p.data[i] = 1;
    t.data[i] = 0;
  }
  for (int k = 0; k < tn; ++k, ++i) {
    p.data[i] = 0;
    t.data[i] = 0;
  }
}

Mat<double> random_probs(int r, int c, Rng& rng) {
  Mat<double> p(r, c);
  for (auto& v : p.data) v = rng.uniform(0.05, 0.95);
  return p;
}

Mat<double> random_binary(int r, int c, Rng& rng) {
  Mat<double> t(r, c);
  for (auto& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

}  // namespace

TEST_CASE("tversky identities") {
  LossWeights w;

  SUBCASE("perfect hard prediction gives exactly zero") {
    Mat<double> p(4, 4), t(4, 4);
    fill_counts(p, t, 9, 0, 0, 7);
    CHECK(tversky_loss(p, t, w).value == 0.0);
  }

  SUBCASE("inverted prediction gives loss 1 up to the smoothing floor") {
    Mat<double> p(4, 4), t(4, 4);
    fill_counts(p, t, 0, 6, 10, 0);
    CHECK(tversky_loss(p, t, w).value == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("confusion-count oracle: TP=8 FN=2 FP=4") {
    Mat<double> p(4, 4), t(4, 4);
    fill_counts(p, t, 8, 2, 4, 2);
    const double expected = 1.0 - 8.0 / (8.0 + 0.3 * 2.0 + 0.7 * 4.0);
    CHECK(std::abs(tversky_loss(p, t, w).value - expected) < 1e-12);
    CHECK(std::abs(tversky_loss(p, t, w).value - (1.0 - 8.0 / 11.4)) < 1e-12);
  }

  SUBCASE("empty target and empty prediction is a perfect score, not 0/0") {
    Mat<double> p(2, 2), t(2, 2);
    CHECK(tversky_loss(p, t, w).value == 0.0);
  }

  SUBCASE("shape mismatch rejected") {
    Mat<double> p(2, 2), t(2, 3);
    CHECK_THROWS_AS(tversky_loss(p, t, w), std::invalid_argument);
  }
}

TEST_CASE("tversky FP monotonicity and the beta>alpha penalty ordering") {
  LossWeights w;
  for (int tp : {2, 5, 9}) {
    for (int fn : {0, 1, 3}) {
      double prev = -1;
      for (int fp = 0; fp <= 4; ++fp) {
        const int n = tp + fn + fp;
        Mat<double> p(1, n + 1), t(1, n + 1);
        fill_counts(p, t, tp, fn, fp, 1);
        const double v = tversky_loss(p, t, w).value;
        if (fp > 0) CHECK(v > prev);
        prev = v;
      }
      // One extra FP hurts at least as much as one extra FN (beta > alpha).
      const int n = tp + fn + 2;
      Mat<double> p_fp(1, n), t_fp(1, n), p_fn(1, n), t_fn(1, n);
      fill_counts(p_fp, t_fp, tp, fn, 1, 1);
      fill_counts(p_fn, t_fn, tp, fn + 1, 0, 1);
      CHECK(tversky_loss(p_fp, t_fp, w).value >= tversky_loss(p_fn, t_fn, w).value);
    }
  }
}

TEST_CASE("focal identities") {
  SUBCASE("p=0.5, t=1, gamma=2 gives (1/4) ln 2 per pixel") {
    Mat<double> p = Mat<double>::full(2, 2, 0.5);
    Mat<double> t = Mat<double>::full(2, 2, 1.0);
    CHECK(focal_loss(p, t, 2.0).value == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("perfect prediction collapses to the clamp floor") {
    Mat<double> p(2, 2), t(2, 2);
    fill_counts(p, t, 2, 0, 0, 2);
    CHECK(focal_loss(p, t, 2.0).value < 1e-10);
  }

  SUBCASE("gamma=0 equals an independent BCE within 1e-12") {
    Rng rng(3);
    const auto p = random_probs(5, 5, rng);
    const auto t = random_binary(5, 5, rng);
    double bce = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i)
      bce += -t.data[i] * std::log(p.data[i]) - (1.0 - t.data[i]) * std::log(1.0 - p.data[i]);
    bce /= static_cast<double>(p.data.size());
    CHECK(std::abs(focal_loss(p, t, 0.0).value - bce) < 1e-12);
  }
}

TEST_CASE("composite loss") {
  LossWeights w;
  Rng rng(17);

  SUBCASE("lambda_f = 0 equals lambda_t * tversky exactly") {
    LossWeights only_t = w;
    only_t.lambda_f = 0;
    const auto p = random_probs(6, 6, rng);
    const auto t = random_binary(6, 6, rng);
    const Mat<double> ps[] = {p};
    const Mat<double> ts[] = {t};
    const auto composite = composite_roi_loss<double>(ps, ts, only_t);
    CHECK(composite.value == doctest::Approx(only_t.lambda_t * tversky_loss(p, t, only_t).value).epsilon(1e-15));
  }

  SUBCASE("random instance equals independently summed components") {
    const auto p = random_probs(8, 8, rng);
    const auto t = random_binary(8, 8, rng);
    const Mat<double> ps[] = {p};
    const Mat<double> ts[] = {t};
    const auto composite = composite_roi_loss<double>(ps, ts, w);
    const double expect = w.lambda_t * tversky_loss(p, t, w).value + w.lambda_f * focal_loss(p, t, w.gamma).value;
    CHECK(std::abs(composite.value - expect) < 1e-12);
  }

  SUBCASE("perfect prediction is bounded by the clamp floor") {
    Mat<double> p(3, 3), t(3, 3);
    fill_counts(p, t, 4, 0, 0, 5);
    const Mat<double> ps[] = {p};
    const Mat<double> ts[] = {t};
    CHECK(composite_roi_loss<double>(ps, ts, w).value < 1e-9);
  }

  SUBCASE("batch sums item losses") {
    const auto p1 = random_probs(4, 4, rng);
    const auto t1 = random_binary(4, 4, rng);
    const auto p2 = random_probs(4, 4, rng);
    const auto t2 = random_binary(4, 4, rng);
    const Mat<double> ps[] = {p1, p2};
    const Mat<double> ts[] = {t1, t2};
    const auto batch = composite_roi_loss<double>(ps, ts, w);
    const Mat<double> ps1[] = {p1};
    const Mat<double> ts1[] = {t1};
    const Mat<double> ps2[] = {p2};
    const Mat<double> ts2[] = {t2};
    CHECK(batch.value == doctest::Approx(composite_roi_loss<double>(ps1, ts1, w).value +
                                         composite_roi_loss<double>(ps2, ts2, w).value)
                             .epsilon(1e-14));
  }
}

TEST_CASE("bce_with_logits") {
  SUBCASE("z=0, y=1 gives ln 2") {
    Mat<double> z(1, 1), y(1, 1);
    y.at(0, 0) = 1;
    CHECK(bce_with_logits(z, y).value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }

  SUBCASE("large logits do not overflow") {
    Mat<double> z(1, 1), y(1, 1);
    z.at(0, 0) = 50;
    y.at(0, 0) = 1;
    const auto r = bce_with_logits(z, y);
    CHECK(std::isfinite(r.value));
    CHECK(r.value < 1e-20);
  }

  SUBCASE("matches the naive clamped form on a random batch of 16") {
    Rng rng(23);
    Mat<double> z(16, 1), y(16, 1);
    for (auto& v : z.data) v = rng.normal(0, 3);
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    double naive = 0;
    for (int i = 0; i < 16; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z.data[static_cast<std::size_t>(i)]));
      const double q = std::min(1.0 - 1e-15, std::max(1e-15, sig));
      naive += -(y.data[static_cast<std::size_t>(i)] * std::log(q) +
                 (1.0 - y.data[static_cast<std::size_t>(i)]) * std::log(1.0 - q));
    }
    naive /= 16.0;
    CHECK(std::abs(bce_with_logits(z, y).value - naive) < 1e-9);
  }

  SUBCASE("gradient is (sigmoid(z)-y)/N") {
    Mat<double> z(2, 1), y(2, 1);
    z.at(0, 0) = 0.7;
    z.at(1, 0) = -1.2;
    y.at(0, 0) = 1;
    const auto r = bce_with_logits(z, y);
    const double s0 = 1.0 / (1.0 + std::exp(-0.7));
    const double s1 = 1.0 / (1.0 + std::exp(1.2));
    CHECK(r.grad.at(0, 0) == doctest::Approx((s0 - 1.0) / 2.0).epsilon(1e-12));
    CHECK(r.grad.at(1, 0) == doctest::Approx(s1 / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(29);
  Mat<double> p = random_probs(6, 6, rng);
  const Mat<double> t = random_binary(6, 6, rng);
  LossWeights w;

  auto check_grad = [&](auto&& value_fn, const Mat<double>& analytic) {
    std::vector<Mat<double>*> params{&p};
    const auto numeric = oracles::finite_difference<double>(params, value_fn, 1e-6);
    for (std::size_t i = 0; i < analytic.data.size(); ++i)
      CHECK(oracles::rel_error(analytic.data[i], numeric[0].data[i]) < 1e-6);
  };

  SUBCASE("tversky") {
    const auto vg = tversky_loss(p, t, w);
    check_grad([&]() { return tversky_loss(p, t, w).value; }, vg.grad);
  }
  SUBCASE("focal") {
    const auto vg = focal_loss(p, t, 2.0);
    check_grad([&]() { return focal_loss(p, t, 2.0).value; }, vg.grad);
  }
  SUBCASE("dice") {
    const auto vg = dice_loss(p, t);
    check_grad([&]() { return dice_loss(p, t).value; }, vg.grad);
  }
  SUBCASE("iou") {
    const auto vg = iou_loss(p, t);
    check_grad([&]() { return iou_loss(p, t).value; }, vg.grad);
  }
  SUBCASE("preset appendix-training") {
    const auto preset = LossPreset::appendix_training();
    const auto vg = preset_loss(p, t, preset);
    check_grad([&]() { return preset_loss(p, t, preset).value; }, vg.grad);
  }
  SUBCASE("bce_with_logits") {
    Mat<double> z(6, 1), y(6, 1);
    for (auto& v : z.data) v = rng.normal(0, 2);
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const auto vg = bce_with_logits(z, y);
    std::vector<Mat<double>*> params{&z};
    const auto numeric = oracles::finite_difference<double>(params, [&]() { return bce_with_logits(z, y).value; }, 1e-6);
    for (std::size_t i = 0; i < vg.grad.data.size(); ++i)
      CHECK(oracles::rel_error(vg.grad.data[i], numeric[0].data[i]) < 1e-6);
  }
}

TEST_CASE("all losses are nonnegative on random inputs") {
  Rng rng(31);
  LossWeights w;
  for (int trial = 0; trial < 25; ++trial) {
    const auto p = random_probs(5, 5, rng);
    const auto t = random_binary(5, 5, rng);
    CHECK(tversky_loss(p, t, w).value >= 0);
    CHECK(focal_loss(p, t, 2.0).value >= 0);
    CHECK(dice_loss(p, t).value >= 0);
    CHECK(iou_loss(p, t).value >= 0);
    const auto preset = LossPreset::appendix_training();
    CHECK(preset_loss(p, t, preset).value >= 0);
  }
}

TEST_CASE("appendix-training preset equals its weighted components") {
  Rng rng(37);
  const auto p = random_probs(6, 6, rng);
  const auto t = random_binary(6, 6, rng);
  const auto preset = LossPreset::appendix_training();
  LossWeights tw;
  tw.alpha = 0.5;
  tw.beta = 0.5;
  const double expect = 0.2 * tversky_loss(p, t, tw).value + 20.0 * focal_loss(p, t, 2.0, 0.25, 0.75).value +
                        dice_loss(p, t).value + iou_loss(p, t).value;
  CHECK(std::abs(preset_loss(p, t, preset).value - expect) < 1e-12);
}
