#pragma once

#include <array>
#include <optional>
#include <type_traits>
#include <span>
#include <stdexcept>
#include <vector>

#include "storm/attention.hpp"
#include "storm/mat.hpp"
#include "storm/tape.hpp"

namespace storm::hsfa {

using storm::AttentionParams;
using storm::FeatureMap;
using storm::LeafBinding;
using storm::Mat;
using storm::Rng;
using storm::Tape;

/// HxW probability grid in [0,1].
template <class Real>
struct RoiHeatmap {
  Mat<Real> values;

  int height() const { return values.rows; }
  int width() const { return values.cols; }
};

/// Channel-wise modulated normalization parameters. The offset maps w_gamma
/// and w_beta start at zero so that, untrained, the text embedding has
/// exactly no effect.
template <class Real>
struct SemanticInjectionParams {
  Mat<Real> w_gamma;     // C x d
  Mat<Real> w_beta;      // C x d
  Mat<Real> base_gamma;  // 1 x C
  Mat<Real> base_beta;   // 1 x C
  Real epsilon = Real(1e-5);

  static SemanticInjectionParams init(int channels, int text_dim) {
    SemanticInjectionParams p;
    p.w_gamma = Mat<Real>::zeros(channels, text_dim);
    p.w_beta = Mat<Real>::zeros(channels, text_dim);
    p.base_gamma = Mat<Real>::full(1, channels, Real(1));
    p.base_beta = Mat<Real>::zeros(1, channels);
    return p;
  }

  int channels() const { return w_gamma.rows; }
  int text_dim() const { return w_gamma.cols; }

  std::vector<Mat<Real>*> parameters() { return {&w_gamma, &w_beta, &base_gamma, &base_beta}; }
  std::vector<const Mat<Real>*> parameters() const { return {&w_gamma, &w_beta, &base_gamma, &base_beta}; }
};

template <class Real>
struct HsfaLayer {
  AttentionParams<Real> query_self;
  AttentionParams<Real> query_cross;
  AttentionParams<Real> view_self;   // shared across the m reference views
  AttentionParams<Real> joint_self;  // over the concatenated reference tokens

  std::vector<Mat<Real>*> parameters() {
    std::vector<Mat<Real>*> out;
    for (auto* block : {&query_self, &query_cross, &view_self, &joint_self})
      for (auto* m : block->parameters()) out.push_back(m);
    return out;
  }

  std::vector<const Mat<Real>*> parameters() const {
    std::vector<const Mat<Real>*> out;
    for (const auto* block : {&query_self, &query_cross, &view_self, &joint_self})
      for (const auto* m : block->parameters()) out.push_back(m);
    return out;
  }
};

template <class Real>
struct HsfaConfig {
  int n_layers = 3;
  int view_count = 16;
  int channels = 32;
  int text_dim = 16;
  int head_count = 1;
  int upsample_scale = 1;
  Real epsilon = Real(1e-5);
};

/// The fusion stack: per layer, query self-attention, query-to-reference
/// cross-attention, semantic injection, per-view self-attention and joint
/// self-attention over the reference concatenation; then an upsampling head.
template <class Real>
struct HsfaModel {
  int n_layers = 0;
  int view_count = 0;
  int channels = 0;
  int text_dim = 0;
  int head_count = 1;
  int upsample_scale = 1;
  std::vector<HsfaLayer<Real>> layers;
  SemanticInjectionParams<Real> injection;
  Mat<Real> head_w;  // C x 1
  Mat<Real> head_b;  // 1 x 1

  static HsfaModel init(const HsfaConfig<Real>& cfg, std::uint64_t seed) {
    if (cfg.n_layers < 0 || cfg.view_count < 1 || cfg.channels < 1 || cfg.text_dim < 1 || cfg.upsample_scale < 1)
      throw std::invalid_argument("HsfaModel: bad configuration");
    Rng rng(seed);
    HsfaModel m;
    m.n_layers = cfg.n_layers;
    m.view_count = cfg.view_count;
    m.channels = cfg.channels;
    m.text_dim = cfg.text_dim;
    m.head_count = cfg.head_count;
    m.upsample_scale = cfg.upsample_scale;
    for (int i = 0; i < cfg.n_layers; ++i) {
      HsfaLayer<Real> layer;
      layer.query_self = AttentionParams<Real>::init(cfg.channels, cfg.head_count, rng);
      layer.query_cross = AttentionParams<Real>::init(cfg.channels, cfg.head_count, rng);
      layer.view_self = AttentionParams<Real>::init(cfg.channels, cfg.head_count, rng);
      layer.joint_self = AttentionParams<Real>::init(cfg.channels, cfg.head_count, rng);
      m.layers.push_back(std::move(layer));
    }
    m.injection = SemanticInjectionParams<Real>::init(cfg.channels, cfg.text_dim);
    m.injection.epsilon = cfg.epsilon;
    const Real s = Real(1) / std::sqrt(static_cast<Real>(cfg.channels));
    m.head_w = random_uniform<Real>(cfg.channels, 1, -s, s, rng);
    m.head_b = Mat<Real>::zeros(1, 1);
    return m;
  }

  /// Parameter list in checkpoint order: per layer the four attention blocks
  /// (each w_q,w_k,w_v,w_o,b_q,b_k,b_v,b_o), then injection
  /// (w_gamma,w_beta,base_gamma,base_beta), then head (w,b).
  std::vector<Mat<Real>*> parameters() {
    std::vector<Mat<Real>*> out;
    for (auto& layer : layers)
      for (auto* m : layer.parameters()) out.push_back(m);
    for (auto* m : injection.parameters()) out.push_back(m);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  std::vector<const Mat<Real>*> parameters() const {
    std::vector<const Mat<Real>*> out;
    for (const auto& layer : layers)
      for (const auto* m : layer.parameters()) out.push_back(m);
    for (const auto* m : injection.parameters()) out.push_back(m);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }
};

namespace ops {

using namespace storm::ops;

struct BoundInjection {
  int w_gamma = -1, w_beta = -1, base_gamma = -1, base_beta = -1;
};

template <class Real>
BoundInjection bind_injection(Tape<Real>& t, LeafBinding<Real>& lb, const SemanticInjectionParams<Real>& p) {
  BoundInjection b;
  b.w_gamma = lb.bind(t, p.w_gamma);
  b.w_beta = lb.bind(t, p.w_beta);
  b.base_gamma = lb.bind(t, p.base_gamma);
  b.base_beta = lb.bind(t, p.base_beta);
  return b;
}

/// Modulated channel normalization: each channel is normalized over patches
/// and then scaled by (gamma + Wg*e_t) and shifted by (beta + Wb*e_t).
template <class Real>
int ada_norm_zero_block(Tape<Real>& t, int f, int e_t, const BoundInjection& p, Real epsilon) {
  const int d_gamma = matmul_bt(t, e_t, p.w_gamma);  // 1xd * (Cxd)^T -> 1xC
  const int d_beta = matmul_bt(t, e_t, p.w_beta);
  const int gamma = add(t, p.base_gamma, d_gamma);
  const int beta = add(t, p.base_beta, d_beta);
  const int normed = channel_norm(t, f, epsilon);
  return rowwise_scale_shift(t, normed, gamma, beta);
}

}  // namespace ops

/// Standalone modulated normalization. A null text embedding is treated as
/// the zero vector, which by zero-initialization of the offset maps is
/// bit-identical to supplying any embedding under w_gamma = w_beta = 0.
template <class Real>
FeatureMap<Real> ada_norm_zero(const FeatureMap<Real>& f, const Mat<Real>* e_t, const SemanticInjectionParams<Real>& p) {
  if (f.channels() != p.channels()) throw std::invalid_argument("ada_norm_zero: channel mismatch");
  Mat<Real> text = e_t ? *e_t : Mat<Real>::zeros(1, p.text_dim());
  if (text.rows != 1 || text.cols != p.text_dim()) throw std::invalid_argument("ada_norm_zero: text embedding size mismatch");
  Tape<Real> tape;
  LeafBinding<Real> lb;
  const auto bp = ops::bind_injection(tape, lb, p);
  const int e_id = tape.leaf(std::move(text));
  const int out = ops::ada_norm_zero_block(tape, tape.leaf(f.data), e_id, bp, p.epsilon);
  return FeatureMap<Real>(tape.value(out), f.grid_h, f.grid_w);
}

/// Per-layer record of which tape node fed the query cross-attention, used to
/// check the first-iteration raw-reference rule.
struct HsfaTrace {
  int raw_ref_concat = -1;
  std::vector<int> cross_kv;  // one entry per layer
};

template <class Real>
struct HsfaForward {
  Tape<Real> tape;
  LeafBinding<Real> binding;  // parameter leaves in HsfaModel::parameters() order
  int heatmap_node = -1;      // (H*W) x 1 probabilities
  int query_node = -1;        // query features entering the head
  RoiHeatmap<Real> heatmap;
  HsfaTrace trace;
};

namespace detail {

template <class Real>
int upsample_head_block(Tape<Real>& t, int q, int gh, int gw, int scale, int head_w, int head_b) {
  const int up = scale == 1 ? q : storm::ops::bilinear_upsample(t, q, gh, gw, scale);
  const int logit = storm::ops::linear(t, up, head_w, head_b);
  return storm::ops::logistic(t, logit);
}

}  // namespace detail

/// Runs the full stack on a query plus m reference feature maps. The text
/// embedding may be null (treated as zeros). Returns the tape so callers can
/// backpropagate into the bound parameters.
template <class Real>
HsfaForward<Real> hsfa_forward(const HsfaModel<Real>& model, const FeatureMap<Real>& query,
                               std::span<const FeatureMap<Real>> refs,
                               std::type_identity_t<const Mat<Real>*> text_embedding = nullptr) {
  if (static_cast<int>(refs.size()) != model.view_count)
    throw std::invalid_argument("hsfa_forward: reference view count does not match the model");
  if (query.channels() != model.channels) throw std::invalid_argument("hsfa_forward: query channel mismatch");
  for (const auto& r : refs)
    if (r.channels() != model.channels) throw std::invalid_argument("hsfa_forward: reference channel mismatch");

  HsfaForward<Real> fwd;
  Tape<Real>& t = fwd.tape;
  LeafBinding<Real>& lb = fwd.binding;

  // Bind parameters first, in HsfaModel::parameters() order.
  std::vector<std::array<storm::BoundAttention, 4>> bound_layers;
  for (const auto& layer : model.layers) {
    std::array<storm::BoundAttention, 4> blocks{
        bind_attention(t, lb, layer.query_self), bind_attention(t, lb, layer.query_cross),
        bind_attention(t, lb, layer.view_self), bind_attention(t, lb, layer.joint_self)};
    bound_layers.push_back(blocks);
  }
  const auto inj = ops::bind_injection(t, lb, model.injection);
  const int head_w = lb.bind(t, model.head_w);
  const int head_b = lb.bind(t, model.head_b);

  Mat<Real> text = text_embedding ? *text_embedding : Mat<Real>::zeros(1, model.text_dim);
  if (text.rows != 1 || text.cols != model.text_dim)
    throw std::invalid_argument("hsfa_forward: text embedding size mismatch");
  const int e_t = t.leaf(std::move(text));

  int q = t.leaf(query.data);
  std::vector<int> view_rows;
  std::vector<int> view_ids;
  for (const auto& r : refs) {
    view_ids.push_back(t.leaf(r.data));
    view_rows.push_back(r.patches());
  }
  int ref_concat = storm::ops::concat_rows<Real>(t, view_ids);
  fwd.trace.raw_ref_concat = ref_concat;

  for (int j = 0; j < model.n_layers; ++j) {
    const auto& blocks = bound_layers[j];
    q = storm::ops::attention_block(t, q, q, blocks[0]);
    // Layer 1 attends to the raw reference concatenation; later layers attend
    // to the previous layer's updated concatenation.
    fwd.trace.cross_kv.push_back(ref_concat);
    q = storm::ops::attention_block(t, q, ref_concat, blocks[1]);
    q = ops::ada_norm_zero_block(t, q, e_t, inj, model.injection.epsilon);

    std::vector<int> updated;
    int row = 0;
    for (std::size_t i = 0; i < view_rows.size(); ++i) {
      const int view = storm::ops::slice_rows(t, ref_concat, row, view_rows[i]);
      updated.push_back(storm::ops::attention_block(t, view, view, blocks[2]));
      row += view_rows[i];
    }
    ref_concat = storm::ops::concat_rows<Real>(t, updated);
    ref_concat = storm::ops::attention_block(t, ref_concat, ref_concat, blocks[3]);
  }

  fwd.query_node = q;
  fwd.heatmap_node = detail::upsample_head_block(t, q, query.grid_h, query.grid_w, model.upsample_scale, head_w, head_b);

  const Mat<Real>& flat = t.value(fwd.heatmap_node);
  const int H = query.grid_h * model.upsample_scale, W = query.grid_w * model.upsample_scale;
  Mat<Real> grid(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) grid.at(r, c) = flat.at(r * W + c, 0);
  fwd.heatmap.values = std::move(grid);
  return fwd;
}

template <class Real>
HsfaForward<Real> hsfa_forward(const HsfaModel<Real>& model, const FeatureMap<Real>& query,
                               const std::vector<FeatureMap<Real>>& refs,
                               std::type_identity_t<const Mat<Real>*> text_embedding = nullptr) {
  return hsfa_forward(model, query, std::span<const FeatureMap<Real>>(refs), text_embedding);
}

/// The upsampling head alone: bilinear upsample by the model's integer scale,
/// 1-channel projection, logistic squash.
template <class Real>
RoiHeatmap<Real> upsample_head(const HsfaModel<Real>& model, const FeatureMap<Real>& q) {
  if (q.channels() != model.channels) throw std::invalid_argument("upsample_head: channel mismatch");
  Tape<Real> t;
  const int head_w = t.leaf(model.head_w);
  const int head_b = t.leaf(model.head_b);
  const int out = detail::upsample_head_block(t, t.leaf(q.data), q.grid_h, q.grid_w, model.upsample_scale, head_w, head_b);
  const Mat<Real>& flat = t.value(out);
  const int H = q.grid_h * model.upsample_scale, W = q.grid_w * model.upsample_scale;
  RoiHeatmap<Real> h;
  h.values = Mat<Real>(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) h.values.at(r, c) = flat.at(r * W + c, 0);
  return h;
}

}  // namespace storm::hsfa
