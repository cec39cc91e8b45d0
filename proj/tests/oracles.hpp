// Test-only oracles kept independent of the implementation paths they check:
// naive loop attention, central finite differences, and small helpers.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "storm/attention.hpp"
#include "storm/mat.hpp"

namespace oracles {

using storm::AttentionParams;
using storm::Mat;

/// Naive three-loop scaled dot-product attention with residual, written
/// directly from the definition (no tape, no shared code with storm::ops).
template <class Real>
Mat<Real> naive_attention(const Mat<Real>& q_in, const Mat<Real>& kv_in, const AttentionParams<Real>& p) {
  const int C = p.w_q.rows;
  const int h = p.head_count;
  const int dh = C / h;
  const int P = q_in.rows, K = kv_in.rows;

  auto matset = [&](const Mat<Real>& x, const Mat<Real>& w, const Mat<Real>& b) {
    Mat<Real> out(x.rows, C);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < C; ++j) {
        double acc = b.at(0, j);
        for (int k = 0; k < C; ++k) acc += static_cast<double>(x.at(i, k)) * static_cast<double>(w.at(k, j));
        out.at(i, j) = static_cast<Real>(acc);
      }
    return out;
  };

  const Mat<Real> Q = matset(q_in, p.w_q, p.b_q);
  const Mat<Real> Km = matset(kv_in, p.w_k, p.b_k);
  const Mat<Real> V = matset(kv_in, p.w_v, p.b_v);

  Mat<Real> mixed(P, C);
  for (int head = 0; head < h; ++head) {
    const int c0 = head * dh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < P; ++i) {
      std::vector<double> scores(static_cast<std::size_t>(K));
      double mx = -1e300;
      for (int j = 0; j < K; ++j) {
        double s = 0;
        for (int d = 0; d < dh; ++d)
          s += static_cast<double>(Q.at(i, c0 + d)) * static_cast<double>(Km.at(j, c0 + d));
        scores[static_cast<std::size_t>(j)] = s * scale;
        mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
      }
      double sum = 0;
      for (int j = 0; j < K; ++j) {
        scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
        sum += scores[static_cast<std::size_t>(j)];
      }
      for (int d = 0; d < dh; ++d) {
        double acc = 0;
        for (int j = 0; j < K; ++j)
          acc += scores[static_cast<std::size_t>(j)] / sum * static_cast<double>(V.at(j, c0 + d));
        mixed.at(i, c0 + d) = static_cast<Real>(acc);
      }
    }
  }
  Mat<Real> out = matset(mixed, p.w_o, p.b_o);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < C; ++j) out.at(i, j) += q_in.at(i, j);
  return out;
}

/// Central finite differences of `loss_fn` with respect to every entry of
/// every parameter in `params` (mutated in place and restored).
template <class Real>
std::vector<Mat<Real>> finite_difference(std::vector<Mat<Real>*> params, const std::function<double()>& loss_fn,
                                         double h = 1e-5) {
  std::vector<Mat<Real>> grads;
  for (Mat<Real>* p : params) {
    Mat<Real> g(p->rows, p->cols);
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const Real saved = p->data[i];
      p->data[i] = static_cast<Real>(saved + h);
      const double up = loss_fn();
      p->data[i] = static_cast<Real>(saved - h);
      const double down = loss_fn();
      p->data[i] = saved;
      g.data[i] = static_cast<Real>((up - down) / (2.0 * h));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

template <class Real>
double max_rel_error(const std::vector<Mat<Real>>& a, const std::vector<Mat<Real>>& b) {
  double worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].data.size(); ++i)
      worst = std::max(worst, rel_error(static_cast<double>(a[k].data[i]), static_cast<double>(b[k].data[i])));
  return worst;
}

}  // namespace oracles
