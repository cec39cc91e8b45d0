#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "storm/attention.hpp"
#include "storm/tape.hpp"

using storm::AttentionParams;
using storm::FeatureMap;
using storm::Mat;
using storm::Rng;
using storm::Tape;

namespace {

template <class Real>
FeatureMap<Real> random_map(int gh, int gw, int c, Rng& rng, Real sigma = Real(1)) {
  return FeatureMap<Real>(storm::random_normal<Real>(gh * gw, c, 0, sigma, rng), gh, gw);
}

}  // namespace

TEST_CASE("softmax_rows matches direct arithmetic and its trivial identities") {
  SUBCASE("uniform row") {
    Mat<double> m(1, 3);
    const auto y = storm::softmax_rows(m);
    for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  SUBCASE("shift invariance") {
    Mat<double> a(1, 4), b(1, 4);
    const double vals[4] = {0.3, -1.2, 2.0, 0.7};
    for (int j = 0; j < 4; ++j) {
      a.at(0, j) = vals[j];
      b.at(0, j) = vals[j] - 123.25;
    }
    const auto ya = storm::softmax_rows(a);
    const auto yb = storm::softmax_rows(b);
    for (int j = 0; j < 4; ++j) CHECK(ya.at(0, j) == doctest::Approx(yb.at(0, j)).epsilon(1e-12));
  }

  SUBCASE("direct exp/sum oracle on [1,2,3]") {
    Mat<double> m(1, 3);
    m.at(0, 0) = 1;
    m.at(0, 1) = 2;
    m.at(0, 2) = 3;
    const auto y = storm::softmax_rows(m);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(y.at(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
    CHECK(y.at(0, 1) == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));
    CHECK(y.at(0, 2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-14));
  }

  SUBCASE("rows sum to one for random matrices") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = storm::random_normal<double>(1 + rng.uniform_int(6), 1 + rng.uniform_int(9), 0, 5, rng);
      const auto y = storm::softmax_rows(m);
      for (int i = 0; i < y.rows; ++i) {
        double s = 0;
        for (int j = 0; j < y.cols; ++j) {
          CHECK(y.at(i, j) >= 0);
          s += y.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }

  SUBCASE("non-finite input raises numeric error") {
    Mat<double> m(1, 2);
    m.at(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(storm::softmax_rows(m), storm::NumericError);
  }
}

TEST_CASE("self_attention residual identity with zero value/output weights") {
  Rng rng(5);
  auto p = AttentionParams<double>::init(8, 1, rng);
  p.w_v.fill(0);
  p.w_o.fill(0);
  const auto x = random_map<double>(2, 2, 8, rng);
  const auto y = storm::self_attention(x, p);
  for (std::size_t i = 0; i < x.data.data.size(); ++i) CHECK(y.data.data[i] == x.data.data[i]);
}

TEST_CASE("single-token attention weight is exactly one") {
  Rng rng(6);
  const auto p = AttentionParams<double>::init(4, 1, rng);
  const auto x = random_map<double>(1, 1, 4, rng);
  const auto y = storm::self_attention(x, p);
  // With one token the softmax is 1, so the result is x + proj(value(x)),
  // reproduced here directly.
  Mat<double> v(1, 4), o(1, 4);
  for (int j = 0; j < 4; ++j) {
    double acc = p.b_v.at(0, j);
    for (int k = 0; k < 4; ++k) acc += x.data.at(0, k) * p.w_v.at(k, j);
    v.at(0, j) = acc;
  }
  for (int j = 0; j < 4; ++j) {
    double acc = p.b_o.at(0, j);
    for (int k = 0; k < 4; ++k) acc += v.at(0, k) * p.w_o.at(k, j);
    o.at(0, j) = acc + x.data.at(0, j);
  }
  for (int j = 0; j < 4; ++j) CHECK(y.data.at(0, j) == doctest::Approx(o.at(0, j)).epsilon(1e-12));
}

TEST_CASE("self and cross attention match the naive three-loop oracle") {
  Rng rng(42);
  SUBCASE("self 4x8") {
    const auto p = AttentionParams<double>::init(8, 1, rng);
    const auto x = random_map<double>(2, 2, 8, rng);
    const auto got = storm::self_attention(x, p);
    const auto want = oracles::naive_attention(x.data, x.data, p);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(std::abs(got.data.data[i] - want.data[i]) < 1e-10);
  }

  SUBCASE("cross 3x8 vs 6x8") {
    const auto p = AttentionParams<double>::init(8, 1, rng);
    const auto q = random_map<double>(1, 3, 8, rng);
    const auto kv = random_map<double>(2, 3, 8, rng);
    const auto got = storm::cross_attention(q, kv, p);
    const auto want = oracles::naive_attention(q.data, kv.data, p);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(std::abs(got.data.data[i] - want.data[i]) < 1e-10);
  }

  SUBCASE("multi-head matches oracle") {
    const auto p = AttentionParams<double>::init(8, 2, rng);
    const auto q = random_map<double>(2, 2, 8, rng);
    const auto kv = random_map<double>(1, 5, 8, rng);
    const auto got = storm::cross_attention(q, kv, p);
    const auto want = oracles::naive_attention(q.data, kv.data, p);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(std::abs(got.data.data[i] - want.data[i]) < 1e-10);
  }

  SUBCASE("kv = q coincides with self attention") {
    const auto p = AttentionParams<double>::init(8, 1, rng);
    const auto q = random_map<double>(2, 2, 8, rng);
    const auto a = storm::self_attention(q, p);
    const auto b = storm::cross_attention(q, q, p);
    CHECK(a.data == b.data);
  }
}

TEST_CASE("attention rejects shape mismatches") {
  Rng rng(3);
  const auto p = AttentionParams<double>::init(8, 1, rng);
  const auto q = random_map<double>(2, 2, 8, rng);
  const auto bad = random_map<double>(2, 2, 4, rng);
  CHECK_THROWS_AS(storm::cross_attention(q, bad, p), std::invalid_argument);
  CHECK_THROWS_AS(storm::self_attention(bad, p), std::invalid_argument);
}

TEST_CASE("forward determinism is bit-exact") {
  Rng rng(9);
  const auto p = AttentionParams<float>::init(16, 2, rng);
  const auto x = random_map<float>(3, 3, 16, rng);
  const auto a = storm::self_attention(x, p);
  const auto b = storm::self_attention(x, p);
  CHECK(a.data == b.data);
}

TEST_CASE("backward: gradients of sum(self_attention) match finite differences") {
  Rng rng(77);
  for (int trial = 0; trial < 4; ++trial) {
    const int C = 4 + 4 * (trial % 2);
    const int P = 2 + trial;
    auto p = AttentionParams<double>::init(C, 1, rng);
    const auto x = storm::random_normal<double>(P, C, 0, 1, rng);

    auto run = [&]() {
      Tape<double> t;
      storm::LeafBinding<double> lb;
      const auto bp = bind_attention(t, lb, p);
      const int out = storm::ops::attention_block(t, t.leaf(x), t.leaf(x), bp);
      double s = 0;
      for (double v : t.value(out).data) s += v;
      return s;
    };

    // Analytic gradients: upstream of ones into the recorded forward.
    Tape<double> t;
    storm::LeafBinding<double> lb;
    const auto bp = bind_attention(t, lb, p);
    const int x_leaf = t.leaf(x);
    const int out = storm::ops::attention_block(t, x_leaf, x_leaf, bp);
    t.backward(out, Mat<double>::full(t.value(out).rows, t.value(out).cols, 1.0));
    auto analytic = lb.grads(t);
    analytic.push_back(t.grad(x_leaf));

    auto params = p.parameters();
    std::vector<Mat<double>*> fd_targets(params.begin(), params.end());
    Mat<double> x_copy = x;
    auto run_with_x = [&]() {
      Tape<double> tt;
      storm::LeafBinding<double> lbb;
      const auto bpp = bind_attention(tt, lbb, p);
      const int oo = storm::ops::attention_block(tt, tt.leaf(x_copy), tt.leaf(x_copy), bpp);
      double s = 0;
      for (double v : tt.value(oo).data) s += v;
      return s;
    };
    (void)run;
    fd_targets.push_back(&x_copy);
    const auto numeric = oracles::finite_difference<double>(fd_targets, run_with_x);
    CHECK(oracles::max_rel_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward: zero upstream produces zero gradients") {
  Rng rng(13);
  auto p = AttentionParams<double>::init(8, 1, rng);
  const auto x = storm::random_normal<double>(4, 8, 0, 1, rng);
  Tape<double> t;
  storm::LeafBinding<double> lb;
  const auto bp = bind_attention(t, lb, p);
  const int out = storm::ops::attention_block(t, t.leaf(x), t.leaf(x), bp);
  t.backward(out, Mat<double>::zeros(t.value(out).rows, t.value(out).cols));
  for (const auto& g : lb.grads(t))
    for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("backward: linear-layer graph equals the closed form") {
  Rng rng(21);
  const auto x = storm::random_normal<double>(5, 3, 0, 1, rng);
  const auto w = storm::random_normal<double>(3, 2, 0, 1, rng);
  const auto b = storm::random_normal<double>(1, 2, 0, 1, rng);
  const auto upstream = storm::random_normal<double>(5, 2, 0, 1, rng);

  Tape<double> t;
  const int xi = t.leaf(x), wi = t.leaf(w), bi = t.leaf(b);
  const int y = storm::ops::linear(t, xi, wi, bi);
  t.backward(y, upstream);

  // dW = x^T g, db = column sums, dx = g W^T.
  const auto dw = storm::matmul_tn(x, upstream);
  for (std::size_t i = 0; i < dw.data.size(); ++i)
    CHECK(t.grad(wi).data[i] == doctest::Approx(dw.data[i]).epsilon(1e-12));
  const auto dx = storm::matmul_bt(upstream, w);
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    CHECK(t.grad(xi).data[i] == doctest::Approx(dx.data[i]).epsilon(1e-12));
  for (int j = 0; j < 2; ++j) {
    double s = 0;
    for (int i = 0; i < 5; ++i) s += upstream.at(i, j);
    CHECK(t.grad(bi).at(0, j) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects a mismatched upstream shape") {
  Tape<double> t;
  const int a = t.leaf(Mat<double>::zeros(2, 2));
  CHECK_THROWS_AS(t.backward(a, Mat<double>::zeros(3, 1)), std::logic_error);
}

TEST_CASE("attention outputs stay finite for finite inputs") {
  Rng rng(1001);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = AttentionParams<double>::init(8, 1, rng);
    const auto x = random_map<double>(2, 3, 8, rng, 50.0);
    const auto y = storm::self_attention(x, p);
    CHECK(y.data.all_finite());
  }
}
