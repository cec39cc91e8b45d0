#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "storm/mat.hpp"
#include "storm/tape.hpp"

namespace storm {

/// A PxC grid of patch embeddings with its 2D layout. The universal currency
/// between feature providers, the fusion stack, and the tracking classifier.
template <class Real>
struct FeatureMap {
  Mat<Real> data;  // P x C
  int grid_h = 0;
  int grid_w = 0;

  FeatureMap() = default;
  FeatureMap(Mat<Real> d, int gh, int gw) : data(std::move(d)), grid_h(gh), grid_w(gw) { validate(); }

  int patches() const { return data.rows; }
  int channels() const { return data.cols; }

  void validate() const {
    if (grid_h <= 0 || grid_w <= 0 || grid_h * grid_w != data.rows)
      throw std::invalid_argument("FeatureMap: grid_h*grid_w must equal patch count");
    if (!data.all_finite()) throw std::invalid_argument("FeatureMap: non-finite entries");
  }
};

/// Projection weights for one attention block. head_count must divide the
/// channel width; scores are scaled by 1/sqrt(C/head_count).
template <class Real>
struct AttentionParams {
  Mat<Real> w_q, w_k, w_v, w_o;  // C x C
  Mat<Real> b_q, b_k, b_v, b_o;  // 1 x C
  int head_count = 1;

  static AttentionParams init(int channels, int head_count, Rng& rng) {
    if (channels <= 0 || head_count <= 0 || channels % head_count != 0)
      throw std::invalid_argument("AttentionParams: head_count must divide channels");
    const Real s = Real(1) / std::sqrt(static_cast<Real>(channels));
    AttentionParams p;
    p.w_q = random_uniform<Real>(channels, channels, -s, s, rng);
    p.w_k = random_uniform<Real>(channels, channels, -s, s, rng);
    p.w_v = random_uniform<Real>(channels, channels, -s, s, rng);
    p.w_o = random_uniform<Real>(channels, channels, -s, s, rng);
    p.b_q = Mat<Real>::zeros(1, channels);
    p.b_k = Mat<Real>::zeros(1, channels);
    p.b_v = Mat<Real>::zeros(1, channels);
    p.b_o = Mat<Real>::zeros(1, channels);
    p.head_count = head_count;
    return p;
  }

  int channels() const { return w_q.rows; }

  std::vector<Mat<Real>*> parameters() { return {&w_q, &w_k, &w_v, &w_o, &b_q, &b_k, &b_v, &b_o}; }
  std::vector<const Mat<Real>*> parameters() const { return {&w_q, &w_k, &w_v, &w_o, &b_q, &b_k, &b_v, &b_o}; }
};

/// Binds model parameters to tape leaves in declaration order so gradients can
/// be collected after backward() in the same order.
template <class Real>
struct LeafBinding {
  std::vector<int> ids;

  int bind(Tape<Real>& tape, const Mat<Real>& p) {
    const int id = tape.leaf(p);
    ids.push_back(id);
    return id;
  }

  /// Gradients for every bound leaf, zeros where backward never reached.
  std::vector<Mat<Real>> grads(Tape<Real>& tape) const {
    std::vector<Mat<Real>> out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (tape.has_grad(id))
        out.push_back(tape.grad(id));
      else {
        const Mat<Real>& v = tape.value(id);
        out.push_back(Mat<Real>::zeros(v.rows, v.cols));
      }
    }
    return out;
  }
};

/// Tape node ids for one attention block's parameters.
struct BoundAttention {
  int w_q = -1, w_k = -1, w_v = -1, w_o = -1;
  int b_q = -1, b_k = -1, b_v = -1, b_o = -1;
  int head_count = 1;
};

template <class Real>
BoundAttention bind_attention(Tape<Real>& t, LeafBinding<Real>& lb, const AttentionParams<Real>& p) {
  BoundAttention b;
  b.w_q = lb.bind(t, p.w_q);
  b.w_k = lb.bind(t, p.w_k);
  b.w_v = lb.bind(t, p.w_v);
  b.w_o = lb.bind(t, p.w_o);
  b.b_q = lb.bind(t, p.b_q);
  b.b_k = lb.bind(t, p.b_k);
  b.b_v = lb.bind(t, p.b_v);
  b.b_o = lb.bind(t, p.b_o);
  b.head_count = p.head_count;
  return b;
}

namespace ops {

/// Scaled dot-product attention with residual connection to the query input:
/// out = q_in + (softmax(Q K^T / sqrt(d_h)) V) W_o + b_o, per head.
template <class Real>
int attention_block(Tape<Real>& t, int q_in, int kv_in, const BoundAttention& p) {
  const int C = t.value(p.w_q).rows;
  if (t.value(q_in).cols != C || t.value(kv_in).cols != C)
    throw std::invalid_argument("attention_block: channel mismatch between inputs and parameters");
  const int h = p.head_count;
  if (h <= 0 || C % h != 0) throw std::invalid_argument("attention_block: head_count must divide channels");
  const int dh = C / h;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(dh));

  const int q = linear(t, q_in, p.w_q, p.b_q);
  const int k = linear(t, kv_in, p.w_k, p.b_k);
  const int v = linear(t, kv_in, p.w_v, p.b_v);

  std::vector<int> heads;
  heads.reserve(h);
  for (int i = 0; i < h; ++i) {
    const int qh = h == 1 ? q : slice_cols(t, q, i * dh, dh);
    const int kh = h == 1 ? k : slice_cols(t, k, i * dh, dh);
    const int vh = h == 1 ? v : slice_cols(t, v, i * dh, dh);
    const int scores = scale(t, matmul_bt(t, qh, kh), sc);
    const int attn = softmax_rows(t, scores);
    heads.push_back(matmul(t, attn, vh));
  }
  const int merged = h == 1 ? heads[0] : concat_cols<Real>(t, heads);
  const int proj = linear(t, merged, p.w_o, p.b_o);
  return add(t, q_in, proj);
}

}  // namespace ops

/// Row-wise softmax as a plain matrix function.
template <class Real>
Mat<Real> softmax_rows(const Mat<Real>& m) {
  Tape<Real> t;
  return t.value(ops::softmax_rows(t, t.leaf(m)));
}

template <class Real>
FeatureMap<Real> cross_attention(const FeatureMap<Real>& q, const FeatureMap<Real>& kv, const AttentionParams<Real>& p) {
  Tape<Real> t;
  LeafBinding<Real> lb;
  const BoundAttention bp = bind_attention(t, lb, p);
  const int out = ops::attention_block(t, t.leaf(q.data), t.leaf(kv.data), bp);
  return FeatureMap<Real>(t.value(out), q.grid_h, q.grid_w);
}

template <class Real>
FeatureMap<Real> self_attention(const FeatureMap<Real>& x, const AttentionParams<Real>& p) {
  return cross_attention(x, x, p);
}

}  // namespace storm
