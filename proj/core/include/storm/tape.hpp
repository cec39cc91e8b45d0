#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "storm/mat.hpp"

namespace storm {

/// Records a forward evaluation as a DAG of matrix values; backward() walks the
/// recording in reverse and accumulates gradients into every node. A tape is
/// confined to one execution context; distinct tapes are independent.
template <class Real>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  int leaf(Mat<Real> value) {
    nodes_.push_back(Node{std::move(value), Mat<Real>(), false, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int node(Mat<Real> value, std::vector<int> parents, BackFn back) {
    for (int p : parents) check_id(p);
    nodes_.push_back(Node{std::move(value), Mat<Real>(), false, std::move(parents), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat<Real>& value(int id) const { return nodes_[check_id(id)].value; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Mat<Real>& grad(int id) {
    Node& n = nodes_[check_id(id)];
    if (!n.grad_alloc) {
      n.grad = Mat<Real>::zeros(n.value.rows, n.value.cols);
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[check_id(id)].grad_alloc; }

  /// Accumulates `upstream` into the root gradient and propagates through the
  /// whole recording. Gradients add up across repeated backward calls.
  void backward(int root, const Mat<Real>& upstream) {
    const Node& r = nodes_[check_id(root)];
    if (upstream.rows != r.value.rows || upstream.cols != r.value.cols)
      throw std::logic_error("Tape::backward: upstream gradient shape does not match root value");
    grad(root) += upstream;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.grad_alloc || !n.back) continue;
      n.back(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<Real> value;
    Mat<Real> grad;
    bool grad_alloc = false;
    std::vector<int> parents;
    BackFn back;
  };

  int check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::logic_error("Tape: node id out of range");
    return id;
  }

  std::vector<Node> nodes_;
};

namespace ops {

template <class Real>
int add(Tape<Real>& t, int a, int b) {
  Mat<Real> out = t.value(a);
  out.require_same_shape(t.value(b), "ops::add");
  out += t.value(b);
  return t.node(std::move(out), {a, b}, [a, b](Tape<Real>& tp, int self) {
    tp.grad(a) += tp.grad(self);
    tp.grad(b) += tp.grad(self);
  });
}

template <class Real>
int scale(Tape<Real>& t, int a, Real s) {
  Mat<Real> out = t.value(a);
  out *= s;
  return t.node(std::move(out), {a}, [a, s](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += s * g.data[i];
  });
}

template <class Real>
int matmul(Tape<Real>& t, int a, int b) {
  Mat<Real> out = storm::matmul(t.value(a), t.value(b));
  return t.node(std::move(out), {a, b}, [a, b](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    matmul_bt_acc(g, tp.value(b), tp.grad(a));  // dA += g * B^T
    matmul_tn_acc(tp.value(a), g, tp.grad(b));  // dB += A^T * g
  });
}

/// value = a * b^T
template <class Real>
int matmul_bt(Tape<Real>& t, int a, int b) {
  Mat<Real> out = storm::matmul_bt(t.value(a), t.value(b));
  return t.node(std::move(out), {a, b}, [a, b](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    matmul_acc(g, tp.value(b), tp.grad(a));     // dA += g * B
    matmul_tn_acc(g, tp.value(a), tp.grad(b));  // dB += g^T * A
  });
}

/// value = x * w + b broadcast over rows; w is CxK, b is 1xK.
template <class Real>
int linear(Tape<Real>& t, int x, int w, int b) {
  const Mat<Real>& xv = t.value(x);
  const Mat<Real>& wv = t.value(w);
  const Mat<Real>& bv = t.value(b);
  if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols)
    throw std::invalid_argument("ops::linear: shape mismatch");
  Mat<Real> out(xv.rows, wv.cols);
  matmul_acc(xv, wv, out);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += bv.at(0, j);
  return t.node(std::move(out), {x, w, b}, [x, w, b](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    matmul_bt_acc(g, tp.value(w), tp.grad(x));
    matmul_tn_acc(tp.value(x), g, tp.grad(w));
    Mat<Real>& gb = tp.grad(b);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
  });
}

/// Row-wise softmax with max subtraction. Rejects non-finite input.
template <class Real>
int softmax_rows(Tape<Real>& t, int x) {
  const Mat<Real>& xv = t.value(x);
  if (!xv.all_finite()) throw NumericError("softmax_rows: non-finite input");
  Mat<Real> out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    Real m = xv.at(i, 0);
    for (int j = 1; j < xv.cols; ++j) m = std::max(m, xv.at(i, j));
    Real sum = 0;
    for (int j = 0; j < xv.cols; ++j) {
      const Real e = std::exp(xv.at(i, j) - m);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < xv.cols; ++j) out.at(i, j) /= sum;
  }
  return t.node(std::move(out), {x}, [x](Tape<Real>& tp, int self) {
    const Mat<Real>& y = tp.value(self);
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    for (int i = 0; i < y.rows; ++i) {
      Real dot = 0;
      for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < y.cols; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

template <class Real>
int logistic(Tape<Real>& t, int x) {
  const Mat<Real>& xv = t.value(x);
  Mat<Real> out(xv.rows, xv.cols);
  for (std::size_t i = 0; i < xv.data.size(); ++i) {
    const Real z = xv.data[i];
    out.data[i] = z >= 0 ? Real(1) / (Real(1) + std::exp(-z)) : std::exp(z) / (Real(1) + std::exp(z));
  }
  return t.node(std::move(out), {x}, [x](Tape<Real>& tp, int self) {
    const Mat<Real>& y = tp.value(self);
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    for (std::size_t i = 0; i < y.data.size(); ++i) gx.data[i] += g.data[i] * y.data[i] * (Real(1) - y.data[i]);
  });
}

template <class Real>
int concat_rows(Tape<Real>& t, std::span<const int> parts) {
  if (parts.empty()) throw std::invalid_argument("ops::concat_rows: empty");
  const int cols = t.value(parts[0]).cols;
  int rows = 0;
  for (int p : parts) {
    if (t.value(p).cols != cols) throw std::invalid_argument("ops::concat_rows: column mismatch");
    rows += t.value(p).rows;
  }
  Mat<Real> out(rows, cols);
  int r0 = 0;
  for (int p : parts) {
    const Mat<Real>& v = t.value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::size_t>(r0) * cols);
    r0 += v.rows;
  }
  std::vector<int> ps(parts.begin(), parts.end());
  return t.node(std::move(out), ps, [ps](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    int r0 = 0;
    for (int p : ps) {
      Mat<Real>& gp = tp.grad(p);
      for (int i = 0; i < gp.rows; ++i)
        for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += g.at(r0 + i, j);
      r0 += gp.rows;
    }
  });
}

template <class Real>
int slice_rows(Tape<Real>& t, int x, int row0, int nrows) {
  const Mat<Real>& xv = t.value(x);
  if (row0 < 0 || nrows <= 0 || row0 + nrows > xv.rows) throw std::invalid_argument("ops::slice_rows: bad range");
  Mat<Real> out(nrows, xv.cols);
  for (int i = 0; i < nrows; ++i)
    for (int j = 0; j < xv.cols; ++j) out.at(i, j) = xv.at(row0 + i, j);
  return t.node(std::move(out), {x}, [x, row0](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) gx.at(row0 + i, j) += g.at(i, j);
  });
}

template <class Real>
int slice_cols(Tape<Real>& t, int x, int col0, int ncols) {
  const Mat<Real>& xv = t.value(x);
  if (col0 < 0 || ncols <= 0 || col0 + ncols > xv.cols) throw std::invalid_argument("ops::slice_cols: bad range");
  Mat<Real> out(xv.rows, ncols);
  for (int i = 0; i < xv.rows; ++i)
    for (int j = 0; j < ncols; ++j) out.at(i, j) = xv.at(i, col0 + j);
  return t.node(std::move(out), {x}, [x, col0](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) gx.at(i, col0 + j) += g.at(i, j);
  });
}

template <class Real>
int concat_cols(Tape<Real>& t, std::span<const int> parts) {
  if (parts.empty()) throw std::invalid_argument("ops::concat_cols: empty");
  const int rows = t.value(parts[0]).rows;
  int cols = 0;
  for (int p : parts) {
    if (t.value(p).rows != rows) throw std::invalid_argument("ops::concat_cols: row mismatch");
    cols += t.value(p).cols;
  }
  Mat<Real> out(rows, cols);
  int c0 = 0;
  for (int p : parts) {
    const Mat<Real>& v = t.value(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < v.cols; ++j) out.at(i, c0 + j) = v.at(i, j);
    c0 += v.cols;
  }
  std::vector<int> ps(parts.begin(), parts.end());
  return t.node(std::move(out), ps, [ps](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    int c0 = 0;
    for (int p : ps) {
      Mat<Real>& gp = tp.grad(p);
      for (int i = 0; i < gp.rows; ++i)
        for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += g.at(i, c0 + j);
      c0 += gp.cols;
    }
  });
}

/// Mean over rows: PxC -> 1xC.
template <class Real>
int mean_rows(Tape<Real>& t, int x) {
  const Mat<Real>& xv = t.value(x);
  if (xv.rows == 0) throw std::invalid_argument("ops::mean_rows: empty input");
  Mat<Real> out(1, xv.cols);
  for (int j = 0; j < xv.cols; ++j) {
    Real s = 0;
    for (int i = 0; i < xv.rows; ++i) s += xv.at(i, j);
    out.at(0, j) = s / static_cast<Real>(xv.rows);
  }
  return t.node(std::move(out), {x}, [x](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    const Real inv = Real(1) / static_cast<Real>(gx.rows);
    for (int i = 0; i < gx.rows; ++i)
      for (int j = 0; j < gx.cols; ++j) gx.at(i, j) += g.at(0, j) * inv;
  });
}

template <class Real>
int sum_all(Tape<Real>& t, int x) {
  const Mat<Real>& xv = t.value(x);
  Mat<Real> out(1, 1);
  Real s = 0;
  for (Real v : xv.data) s += v;
  out.at(0, 0) = s;
  return t.node(std::move(out), {x}, [x](Tape<Real>& tp, int self) {
    const Real g = tp.grad(self).at(0, 0);
    Mat<Real>& gx = tp.grad(x);
    for (Real& v : gx.data) v += g;
  });
}

/// Per-channel normalization over rows (patches): for each column c,
/// y(i,c) = (x(i,c) - mu_c) / (sigma_c + eps) with population statistics.
template <class Real>
int channel_norm(Tape<Real>& t, int x, Real eps) {
  const Mat<Real>& xv = t.value(x);
  if (xv.rows == 0) throw std::invalid_argument("ops::channel_norm: empty input");
  const int P = xv.rows, C = xv.cols;
  Mat<Real> out(P, C);
  std::vector<Real> mu(C), denom(C), sigma(C);
  for (int c = 0; c < C; ++c) {
    Real s = 0;
    for (int i = 0; i < P; ++i) s += xv.at(i, c);
    mu[c] = s / static_cast<Real>(P);
    Real v = 0;
    for (int i = 0; i < P; ++i) {
      const Real d = xv.at(i, c) - mu[c];
      v += d * d;
    }
    sigma[c] = std::sqrt(v / static_cast<Real>(P));
    denom[c] = sigma[c] + eps;
    for (int i = 0; i < P; ++i) out.at(i, c) = (xv.at(i, c) - mu[c]) / denom[c];
  }
  return t.node(std::move(out), {x}, [x, mu, sigma, denom](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    const Mat<Real>& xval = tp.value(x);
    Mat<Real>& gx = tp.grad(x);
    const int P = xval.rows, C = xval.cols;
    const Real invP = Real(1) / static_cast<Real>(P);
    for (int c = 0; c < C; ++c) {
      Real gsum = 0, gdot = 0;
      for (int i = 0; i < P; ++i) {
        gsum += g.at(i, c);
        gdot += g.at(i, c) * (xval.at(i, c) - mu[c]);
      }
      const Real d = denom[c];
      // dsigma/dx_j = (x_j - mu)/(P*sigma); undefined at sigma=0 where the
      // centered values are identically zero and the term vanishes anyway.
      const Real sig_term = sigma[c] > Real(0) ? gdot / (static_cast<Real>(P) * sigma[c] * d * d) : Real(0);
      for (int j = 0; j < P; ++j) {
        gx.at(j, c) += (g.at(j, c) - gsum * invP) / d - (xval.at(j, c) - mu[c]) * sig_term;
      }
    }
  });
}

/// y(i,c) = x(i,c) * g(0,c) + b(0,c)
template <class Real>
int rowwise_scale_shift(Tape<Real>& t, int x, int gamma, int beta) {
  const Mat<Real>& xv = t.value(x);
  const Mat<Real>& gv = t.value(gamma);
  const Mat<Real>& bv = t.value(beta);
  if (gv.rows != 1 || bv.rows != 1 || gv.cols != xv.cols || bv.cols != xv.cols)
    throw std::invalid_argument("ops::rowwise_scale_shift: shape mismatch");
  Mat<Real> out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i)
    for (int j = 0; j < xv.cols; ++j) out.at(i, j) = xv.at(i, j) * gv.at(0, j) + bv.at(0, j);
  return t.node(std::move(out), {x, gamma, beta}, [x, gamma, beta](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    const Mat<Real>& xval = tp.value(x);
    const Mat<Real>& gval = tp.value(gamma);
    Mat<Real>& gx = tp.grad(x);
    Mat<Real>& gg = tp.grad(gamma);
    Mat<Real>& gb = tp.grad(beta);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        gx.at(i, j) += g.at(i, j) * gval.at(0, j);
        gg.at(0, j) += g.at(i, j) * xval.at(i, j);
        gb.at(0, j) += g.at(i, j);
      }
  });
}

/// Bilinear upsampling of a (gh*gw)xC token grid by integer scale s, using the
/// align-corners mapping src = dst*(in-1)/(out-1). Produces (gh*s*gw*s)xC.
template <class Real>
int bilinear_upsample(Tape<Real>& t, int x, int grid_h, int grid_w, int s) {
  const Mat<Real>& xv = t.value(x);
  if (s < 1) throw std::invalid_argument("ops::bilinear_upsample: scale must be >= 1");
  if (grid_h * grid_w != xv.rows) throw std::invalid_argument("ops::bilinear_upsample: grid does not match rows");
  const int H = grid_h * s, W = grid_w * s, C = xv.cols;

  struct Tap {
    int src;
    Real w;
  };
  // Each output cell mixes at most 4 source cells; precompute taps once.
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(H) * W);
  auto axis = [](int out_i, int in_n, int out_n) {
    if (out_n == 1 || in_n == 1) return std::pair<std::pair<int, double>, std::pair<int, double>>{{0, 1.0}, {0, 0.0}};
    const double src = static_cast<double>(out_i) * (in_n - 1) / static_cast<double>(out_n - 1);
    int lo = static_cast<int>(std::floor(src));
    if (lo >= in_n - 1) lo = in_n - 2;
    const double f = src - lo;
    return std::pair<std::pair<int, double>, std::pair<int, double>>{{lo, 1.0 - f}, {lo + 1, f}};
  };
  for (int r = 0; r < H; ++r) {
    const auto [r0, r1] = axis(r, grid_h, H);
    for (int c = 0; c < W; ++c) {
      const auto [c0, c1] = axis(c, grid_w, W);
      auto& cell = taps[static_cast<std::size_t>(r) * W + c];
      for (const auto& rr : {r0, r1})
        for (const auto& cc : {c0, c1}) {
          const Real w = static_cast<Real>(rr.second * cc.second);
          if (w == Real(0)) continue;
          cell.push_back(Tap{rr.first * grid_w + cc.first, w});
        }
    }
  }

  Mat<Real> out(H * W, C);
  for (int o = 0; o < H * W; ++o)
    for (const Tap& tp : taps[o])
      for (int j = 0; j < C; ++j) out.at(o, j) += tp.w * xv.at(tp.src, j);

  return t.node(std::move(out), {x}, [x, taps](Tape<Real>& tp, int self) {
    const Mat<Real>& g = tp.grad(self);
    Mat<Real>& gx = tp.grad(x);
    for (int o = 0; o < g.rows; ++o)
      for (const Tap& tap : taps[o])
        for (int j = 0; j < g.cols; ++j) gx.at(tap.src, j) += tap.w * g.at(o, j);
  });
}

}  // namespace ops
}  // namespace storm
