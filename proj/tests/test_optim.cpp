#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "storm/optim.hpp"

using namespace storm::optim;
using storm::Mat;
using storm::NumericError;
using storm::Rng;

TEST_CASE("lr schedule hits its anchors exactly") {
  LrSchedule s;  // eta0 0.01, warmup 5000, total 80000
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 5000) == s.eta0);
  CHECK(lr_at(s, 80000) == 0.0);
  CHECK(lr_at(s, 2500) == doctest::Approx(0.005).epsilon(1e-15));
}

TEST_CASE("lr schedule is continuous at the warmup boundary and nonincreasing after") {
  LrSchedule s{0.01, 100, 1000};
  CHECK(std::abs(lr_at(s, 100) - lr_at(s, 99)) <= s.eta0 / 100 + 1e-15);
  double prev = lr_at(s, 100);
  for (int t = 101; t <= 1000; ++t) {
    const double cur = lr_at(s, t);
    CHECK(cur <= prev + 1e-18);
    prev = cur;
  }
}

TEST_CASE("lr past the end clamps to the final value with a warning flag") {
  LrSchedule s{0.01, 10, 100};
  const auto r = lr_at_checked(s, 150);
  CHECK(r.clamped);
  CHECK(r.eta == lr_at(s, 100));
  CHECK_FALSE(lr_at_checked(s, 100).clamped);
}

TEST_CASE("lr schedule validates its shape") {
  LrSchedule bad{0.01, 100, 100};
  CHECK_THROWS_AS(lr_at(bad, 0), std::invalid_argument);
  LrSchedule bad2{0.01, 0, 100};
  CHECK_THROWS_AS(lr_at(bad2, 0), std::invalid_argument);
}

TEST_CASE("adam first step follows the closed form") {
  Mat<double> theta(1, 1);
  theta.at(0, 0) = 0.5;
  Adam<double> adam({&theta});
  Mat<double> g(1, 1);
  g.at(0, 0) = 1.0;
  const Mat<double> grads[] = {g};
  adam.step(grads, 0.01);
  // mhat = g, vhat = g^2 on the first step, so the update is
  // -eta * 1/(1 + eps).
  CHECK(theta.at(0, 0) == doctest::Approx(0.5 - 0.01 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam with zero gradients from a fresh state leaves parameters untouched") {
  Rng rng(3);
  Mat<double> theta = storm::random_normal<double>(3, 2, 0, 1, rng);
  const Mat<double> before = theta;
  Adam<double> adam({&theta});
  const Mat<double> grads[] = {Mat<double>::zeros(3, 2)};
  adam.step(grads, 0.01);
  CHECK(theta == before);
}

TEST_CASE("adam trajectory matches a straight-line transcription over 100 steps") {
  Rng rng(7);
  Mat<double> theta(1, 1);
  theta.at(0, 0) = 1.25;
  Adam<double> adam({&theta});

  // Independent transcription of the four update equations.
  double ref_theta = 1.25, m = 0, v = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, eta = 0.003;

  for (int t = 1; t <= 100; ++t) {
    const double g = rng.normal(0, 1);
    Mat<double> gm(1, 1);
    gm.at(0, 0) = g;
    const Mat<double> grads[] = {gm};
    adam.step(grads, eta);

    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    ref_theta -= eta * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::abs(theta.at(0, 0) - ref_theta) < 1e-12);
  }
}

TEST_CASE("adam is scale-equivariant in eta on the first step") {
  Mat<double> a(2, 1), b(2, 1);
  a.at(0, 0) = b.at(0, 0) = 0.4;
  a.at(1, 0) = b.at(1, 0) = -0.2;
  Adam<double> oa({&a}), ob({&b});
  Mat<double> g(2, 1);
  g.at(0, 0) = 0.7;
  g.at(1, 0) = -1.1;
  const Mat<double> grads[] = {g};
  oa.step(grads, 0.01);
  ob.step(grads, 0.02);
  CHECK((b.at(0, 0) - 0.4) == doctest::Approx(2.0 * (a.at(0, 0) - 0.4)).epsilon(1e-15));
  CHECK((b.at(1, 0) + 0.2) == doctest::Approx(2.0 * (a.at(1, 0) + 0.2)).epsilon(1e-15));
}

TEST_CASE("adam aborts on non-finite gradients with parameters untouched") {
  Mat<double> theta(2, 1);
  theta.at(0, 0) = 1.0;
  Adam<double> adam({&theta});
  Mat<double> g(2, 1);
  g.at(1, 0) = std::numeric_limits<double>::quiet_NaN();
  const Mat<double> grads[] = {g};
  CHECK_THROWS_AS(adam.step(grads, 0.01), NumericError);
  CHECK(theta.at(0, 0) == 1.0);
  CHECK(adam.step_count() == 0);
}

TEST_CASE("clip_grad_norm") {
  SUBCASE("below the bound is untouched") {
    std::vector<Mat<double>> grads{Mat<double>::full(1, 2, 0.03)};
    const auto before = grads[0];
    const double norm = clip_grad_norm(grads, 0.1);
    CHECK(norm == doctest::Approx(std::sqrt(2 * 0.03 * 0.03)));
    CHECK(grads[0] == before);
  }

  SUBCASE("above the bound rescales to exactly max_norm") {
    std::vector<Mat<double>> grads{Mat<double>::full(2, 2, 0.5)};
    clip_grad_norm(grads, 0.1);
    double sq = 0;
    for (double v : grads[0].data) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 0.1) < 1e-12);
  }

  SUBCASE("post-clip norm equals min(norm, max_norm) and no entry grows") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<Mat<double>> grads{storm::random_normal<double>(3, 3, 0, 1, rng),
                                     storm::random_normal<double>(2, 5, 0, 1, rng)};
      const auto copy = grads;
      const double max_norm = rng.uniform(0.05, 3.0);
      const double pre = clip_grad_norm(grads, max_norm);
      double sq = 0;
      for (const auto& g : grads)
        for (double v : g.data) sq += v * v;
      CHECK(std::abs(std::sqrt(sq) - std::min(pre, max_norm)) < 1e-12);
      for (std::size_t k = 0; k < grads.size(); ++k)
        for (std::size_t i = 0; i < grads[k].data.size(); ++i)
          CHECK(std::abs(grads[k].data[i]) <= std::abs(copy[k].data[i]) + 1e-18);
    }
  }

  SUBCASE("non-positive max_norm rejected") {
    std::vector<Mat<double>> grads{Mat<double>::zeros(1, 1)};
    CHECK_THROWS_AS(clip_grad_norm(grads, 0.0), std::invalid_argument);
  }
}

namespace {

/// Quadratic bowl used to exercise the generic loop.
struct Bowl {
  Mat<double> theta = Mat<double>::full(2, 1, 3.0);
  Mat<double> target = Mat<double>::zeros(2, 1);

  double step(std::vector<Mat<double>>& grads) {
    double loss = 0;
    for (int i = 0; i < 2; ++i) {
      const double d = theta.at(i, 0) - target.at(i, 0);
      loss += d * d;
      grads[0].at(i, 0) = 2 * d;
    }
    return loss;
  }
};

}  // namespace

TEST_CASE("fit: zero learning rate leaves parameters bit-identical") {
  Bowl bowl;
  const Mat<double> before = bowl.theta;
  TrainConfig cfg;
  cfg.eta0 = 0.0;
  cfg.warmup_steps = 5;
  cfg.total_steps = 20;
  const auto result =
      fit<double>({&bowl.theta}, [&](int, Rng&, std::vector<Mat<double>>& g) { return bowl.step(g); }, cfg);
  CHECK(result.steps_run == 20);
  CHECK(bowl.theta == before);
}

TEST_CASE("fit: optimizes the bowl and the EMA trace follows its recurrence") {
  Bowl bowl;
  TrainConfig cfg;
  cfg.eta0 = 0.05;
  cfg.warmup_steps = 10;
  cfg.total_steps = 400;
  cfg.clip_max_norm = 10.0;
  const auto result =
      fit<double>({&bowl.theta}, [&](int, Rng&, std::vector<Mat<double>>& g) { return bowl.step(g); }, cfg);
  CHECK_FALSE(result.diverged);
  CHECK(result.trace.back().ema < result.trace.front().ema / 10.0);

  double ema = result.trace.front().loss;
  for (std::size_t i = 0; i < result.trace.size(); ++i) {
    if (i > 0) ema = 0.99 * ema + 0.01 * result.trace[i].loss;
    CHECK(result.trace[i].ema == doctest::Approx(ema).epsilon(1e-12));
  }
}

TEST_CASE("fit: EMA is constant under constant loss") {
  Mat<double> theta(1, 1);
  TrainConfig cfg;
  cfg.eta0 = 0.0;
  cfg.warmup_steps = 2;
  cfg.total_steps = 50;
  const auto result = fit<double>({&theta}, [&](int, Rng&, std::vector<Mat<double>>&) { return 2.5; }, cfg);
  for (const auto& row : result.trace) CHECK(row.ema == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("fit: NaN loss aborts with the trace collected so far") {
  Mat<double> theta(1, 1);
  TrainConfig cfg;
  cfg.eta0 = 0.01;
  cfg.warmup_steps = 2;
  cfg.total_steps = 100;
  const auto result = fit<double>({&theta}, [&](int step, Rng&, std::vector<Mat<double>>&) {
    return step < 7 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  }, cfg);
  CHECK(result.diverged);
  CHECK(result.trace.size() == 7);
}

TEST_CASE("fit: sgd variant takes plain gradient steps") {
  Mat<double> theta(1, 1);
  theta.at(0, 0) = 1.0;
  TrainConfig cfg;
  cfg.optimizer = "sgd";
  cfg.eta0 = 0.1;
  cfg.warmup_steps = 1;
  cfg.total_steps = 2;
  cfg.clip_max_norm = 100.0;
  const auto result = fit<double>({&theta}, [&](int, Rng&, std::vector<Mat<double>>& g) {
    g[0].at(0, 0) = 1.0;
    return 1.0;
  }, cfg);
  CHECK(result.steps_run == 2);
  // Step 0 has lr 0 (ramp start); step 1 has lr eta0.
  CHECK(theta.at(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-15));
}
