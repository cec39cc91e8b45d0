#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/attention.hpp"
#include "storm/geometry.hpp"
#include "storm/mat.hpp"
#include "storm/optim.hpp"
#include "storm/tape.hpp"

namespace storm::tom {

using storm::AttentionParams;
using storm::FeatureMap;
using storm::LeafBinding;
using storm::Mat;
using storm::Rng;
using storm::Tape;

/// A feature-space crop: the token grid extracted around a tracked object.
template <class Real>
struct CropFeature {
  Mat<Real> data;  // P x C
  int source_frame = -1;
  std::int64_t object_id = -1;
};

template <class Real>
class MemoryPool {
 public:
  explicit MemoryPool(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("MemoryPool: capacity must be positive");
  }

  /// Appends an entry, evicting the oldest when at capacity.
  void push(CropFeature<Real> entry) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(entry));
  }

  const std::deque<CropFeature<Real>>& entries() const { return entries_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::size_t capacity_;
  std::deque<CropFeature<Real>> entries_;
};

/// Verification subnetwork: the candidate and reference token sequences are
/// concatenated, passed through 0-2 self-attention layers, mean-pooled, and
/// mapped to a single logit.
template <class Real>
struct TomModel {
  std::vector<AttentionParams<Real>> layers;  // 0, 1 or 2
  Mat<Real> w;                                // C x 1
  Mat<Real> b;                                // 1 x 1

  static TomModel init(int channels, int attention_layers, std::uint64_t seed, int head_count = 1) {
    if (attention_layers < 0 || attention_layers > 2)
      throw std::invalid_argument("TomModel: attention_layers must be 0, 1 or 2");
    Rng rng(seed);
    TomModel m;
    for (int i = 0; i < attention_layers; ++i) m.layers.push_back(AttentionParams<Real>::init(channels, head_count, rng));
    const Real s = Real(1) / std::sqrt(static_cast<Real>(channels));
    m.w = random_uniform<Real>(channels, 1, -s, s, rng);
    m.b = Mat<Real>::zeros(1, 1);
    return m;
  }

  int channels() const { return w.rows; }
  int attention_layers() const { return static_cast<int>(layers.size()); }

  std::vector<Mat<Real>*> parameters() {
    std::vector<Mat<Real>*> out;
    for (auto& l : layers)
      for (auto* m : l.parameters()) out.push_back(m);
    out.push_back(&w);
    out.push_back(&b);
    return out;
  }

  std::vector<const Mat<Real>*> parameters() const {
    std::vector<const Mat<Real>*> out;
    for (const auto& l : layers)
      for (const auto* m : l.parameters()) out.push_back(m);
    out.push_back(&w);
    out.push_back(&b);
    return out;
  }
};

template <class Real>
struct TomForward {
  Tape<Real> tape;
  LeafBinding<Real> binding;
  int logit_node = -1;
  double score = 0;  // logistic(logit)
};

template <class Real>
TomForward<Real> tom_forward(const TomModel<Real>& model, const Mat<Real>& candidate, const Mat<Real>& reference) {
  if (candidate.cols != reference.cols || candidate.rows != reference.rows)
    throw std::invalid_argument("tom_forward: candidate/reference shape mismatch");
  if (candidate.cols != model.channels()) throw std::invalid_argument("tom_forward: channel mismatch with model");
  TomForward<Real> fwd;
  Tape<Real>& t = fwd.tape;
  std::vector<storm::BoundAttention> blocks;
  for (const auto& l : model.layers) blocks.push_back(bind_attention(t, fwd.binding, l));
  const int w = fwd.binding.bind(t, model.w);
  const int b = fwd.binding.bind(t, model.b);

  const std::array<int, 2> parts{t.leaf(candidate), t.leaf(reference)};
  int x = storm::ops::concat_rows<Real>(t, parts);
  for (const auto& blk : blocks) x = storm::ops::attention_block(t, x, x, blk);
  const int pooled = storm::ops::mean_rows(t, x);
  fwd.logit_node = storm::ops::linear(t, pooled, w, b);
  const double z = static_cast<double>(t.value(fwd.logit_node).at(0, 0));
  fwd.score = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return fwd;
}

/// Tracking-success score in (0,1).
template <class Real>
double verify(const TomModel<Real>& model, const CropFeature<Real>& candidate, const CropFeature<Real>& reference) {
  return tom_forward(model, candidate.data, reference.data).score;
}

/// Cosine similarity of mean-pooled token vectors, in [-1,1].
template <class Real>
double cosine_verify(const CropFeature<Real>& candidate, const CropFeature<Real>& reference) {
  if (candidate.data.cols != reference.data.cols || candidate.data.rows != reference.data.rows)
    throw std::invalid_argument("cosine_verify: shape mismatch");
  const int C = candidate.data.cols;
  std::vector<double> a(C, 0.0), b(C, 0.0);
  for (int i = 0; i < candidate.data.rows; ++i)
    for (int j = 0; j < C; ++j) {
      a[j] += candidate.data.at(i, j);
      b[j] += reference.data.at(i, j);
    }
  double dot = 0, na = 0, nb = 0;
  for (int j = 0; j < C; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_verify: zero-norm pooled vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---- tracking state machine ----------------------------------------------

enum class TrackState { Registered, Tracking, Lost };
enum class TrackDecision { Continue, ReRegister };

inline const char* to_string(TrackState s) {
  switch (s) {
    case TrackState::Registered: return "Registered";
    case TrackState::Tracking: return "Tracking";
    case TrackState::Lost: return "Lost";
  }
  return "?";
}

inline const char* to_string(TrackDecision d) {
  return d == TrackDecision::Continue ? "Continue" : "ReRegister";
}

/// Per-object tracker state: memory pool, score history, threshold.
/// Transitions: step() moves Registered/Tracking to Tracking when the pool
/// score clears the threshold and to Lost otherwise; re_register() moves
/// Lost back to Registered with a fresh pool entry. No other transitions.
template <class Real>
class TrackSession {
 public:
  TrackSession(CropFeature<Real> initial, std::size_t capacity = 8, double threshold = 0.5)
      : pool_(capacity), threshold_(threshold) {
    if (!(threshold >= 0.0 && threshold < 1.0))
      throw std::invalid_argument("TrackSession: threshold must lie in [0,1)");
    pool_.push(std::move(initial));
  }

  TrackState state() const { return state_; }
  const MemoryPool<Real>& pool() const { return pool_; }
  const std::vector<double>& score_history() const { return score_history_; }
  double threshold() const { return threshold_; }

  /// Scores the crop against the pool (max over entries) and decides.
  TrackDecision step(const TomModel<Real>& model, const CropFeature<Real>& crop) {
    if (state_ == TrackState::Lost) throw std::logic_error("TrackSession::step: session is Lost; re_register first");
    if (pool_.size() == 0) throw std::logic_error("TrackSession::step: empty memory pool");
    double best = 0;
    for (const auto& entry : pool_.entries()) best = std::max(best, verify(model, crop, entry));
    score_history_.push_back(best);
    if (best >= threshold_) {
      state_ = TrackState::Tracking;
      return TrackDecision::Continue;
    }
    state_ = TrackState::Lost;
    return TrackDecision::ReRegister;
  }

  /// Appends the fresh crop obtained by re-running registration.
  void re_register(CropFeature<Real> fresh) {
    if (state_ != TrackState::Lost) throw std::logic_error("TrackSession::re_register: only valid from Lost");
    pool_.push(std::move(fresh));
    state_ = TrackState::Registered;
  }

 private:
  TrackState state_ = TrackState::Registered;
  MemoryPool<Real> pool_;
  std::vector<double> score_history_;
  double threshold_;
};

// ---- synthetic archetypes and the tracking-pair dataset -------------------

/// Seeded Gaussian token fields: a foreground offset shared by every object
/// (any object token carries it, background does not), a per-object mean
/// signature, per-token patterns and a per-token linear viewpoint response.
/// Crops sampled from the same archetype correlate strongly at the token
/// level; different archetypes do not.
template <class Real>
class ArchetypeLibrary {
 public:
  struct Scales {
    double foreground = 1.0;  // shared objectness component
    double mu = 0.2;          // per-object pooled signature
    double pattern = 1.2;     // per-token identity
    double view = 0.8;        // per-token viewpoint response
    double noise = 0.5;
  };

  static ArchetypeLibrary make(int count, int grid, int channels, std::uint64_t seed, Scales scales = {}) {
    if (count < 1 || grid < 1 || channels < 1) throw std::invalid_argument("ArchetypeLibrary: bad dimensions");
    ArchetypeLibrary lib;
    lib.grid_ = grid;
    lib.channels_ = channels;
    lib.scales_ = scales;
    Rng fg_rng(Rng::derive(seed, 0x464f5245ull));
    lib.foreground_ = random_normal<Real>(1, channels, 0, static_cast<Real>(scales.foreground), fg_rng);
    const int P = grid * grid;
    for (int a = 0; a < count; ++a) {
      Rng rng(Rng::derive(seed, 0x41524348ull + static_cast<std::uint64_t>(a)));
      Archetype arc;
      arc.mu = random_normal<Real>(1, channels, 0, static_cast<Real>(scales.mu), rng);
      arc.pattern = random_normal<Real>(P, channels, 0, static_cast<Real>(scales.pattern), rng);
      for (auto& basis : arc.view_basis) basis = random_normal<Real>(P, channels, 0, static_cast<Real>(scales.view), rng);
      lib.archetypes_.push_back(std::move(arc));
    }
    return lib;
  }

  int count() const { return static_cast<int>(archetypes_.size()); }
  int grid() const { return grid_; }
  int channels() const { return channels_; }
  const Scales& scales() const { return scales_; }

  /// Token grid of one archetype seen from `view`, plus iid noise.
  Mat<Real> sample(int archetype, const geometry::Vec3& view, Rng& rng) const {
    const Archetype& a = archetypes_.at(static_cast<std::size_t>(archetype));
    const int P = grid_ * grid_;
    Mat<Real> out(P, channels_);
    for (int i = 0; i < P; ++i)
      for (int c = 0; c < channels_; ++c) {
        double v = foreground_.at(0, c) + a.mu.at(0, c) + a.pattern.at(i, c);
        v += a.view_basis[0].at(i, c) * view.x + a.view_basis[1].at(i, c) * view.y + a.view_basis[2].at(i, c) * view.z;
        out.at(i, c) = static_cast<Real>(v + rng.normal(0, scales_.noise));
      }
    return out;
  }

 private:
  struct Archetype {
    Mat<Real> mu;
    Mat<Real> pattern;
    std::array<Mat<Real>, 3> view_basis;
  };

  int grid_ = 0;
  int channels_ = 0;
  Scales scales_;
  Mat<Real> foreground_;
  std::vector<Archetype> archetypes_;
};

/// Unit direction `angle` radians away from d, rotated toward a random
/// orthogonal direction.
geometry::Vec3 perturb_direction(const geometry::Vec3& d, double angle, Rng& rng);

geometry::Vec3 random_direction(Rng& rng);

enum class PairKind { Positive, CrossObject, Drift, RotationLoss };

inline const char* to_string(PairKind k) {
  switch (k) {
    case PairKind::Positive: return "positive";
    case PairKind::CrossObject: return "cross-object";
    case PairKind::Drift: return "drift";
    case PairKind::RotationLoss: return "rotation-loss";
  }
  return "?";
}

template <class Real>
struct TrackingPair {
  Mat<Real> candidate;  // tracker-output crop
  Mat<Real> reference;  // memory-pool crop
  std::uint8_t label = 0;
  PairKind kind = PairKind::Positive;
  int candidate_object = -1;
  int reference_object = -1;
  std::uint64_t seed = 0;
};

struct TrackingDatasetConfig {
  int pair_count = 200000;  // scaled down by callers for desk-scale runs
  int archetype_count = 4;
  int grid = 6;
  int channels = 32;
  std::uint64_t seed = 0;
  double foreground_scale = 1.0;
  double mu_scale = 0.2;
  double pattern_scale = 1.2;
  double view_scale = 0.8;
  double noise_sigma = 0.5;
  double positive_max_angle_deg = 15.0;
  double rotation_min_angle_deg = 60.0;
  // Mix of negative kinds (normalized internally).
  double cross_weight = 0.2;
  double drift_weight = 0.5;
  double rotation_weight = 0.3;
  int drift_min_shift = 2;
  int drift_max_shift = 4;
};

/// Deterministic per-index pair construction: even indices are positives,
/// odd indices negatives, so any prefix and any split stays balanced.
template <class Real>
class TrackingDatasetGenerator {
 public:
  explicit TrackingDatasetGenerator(TrackingDatasetConfig cfg);

  const TrackingDatasetConfig& config() const { return cfg_; }
  const ArchetypeLibrary<Real>& library() const { return lib_; }

  TrackingPair<Real> pair(int index) const;

 private:
  TrackingDatasetConfig cfg_;
  ArchetypeLibrary<Real> lib_;
};

template <class Real>
std::vector<TrackingPair<Real>> generate_tracking_dataset(const TrackingDatasetConfig& cfg) {
  TrackingDatasetGenerator<Real> gen(cfg);
  std::vector<TrackingPair<Real>> out;
  out.reserve(static_cast<std::size_t>(cfg.pair_count));
  for (int i = 0; i < cfg.pair_count; ++i) out.push_back(gen.pair(i));
  return out;
}

// ---- failure simulation ----------------------------------------------------

struct FailureSimConfig {
  double keep_ratio = 1.0;     // (0,1]; fraction of frames retained
  double occlusion_prob = 0.0; // per retained frame
  int occlusion_h = 3;
  int occlusion_w = 3;
  std::uint64_t seed = 0;
};

struct OcclusionEvent {
  int frame = 0;  // index into the perturbed sequence
  int r0 = 0, c0 = 0, h = 0, w = 0;
};

template <class Real>
struct PerturbedSequence {
  std::vector<FeatureMap<Real>> frames;
  std::vector<int> kept_indices;  // into the original sequence, ascending
  std::vector<OcclusionEvent> occlusions;
};

/// Drops frames at the configured keep ratio and zeroes random contiguous
/// token blocks to model occlusion. Seeded and deterministic.
template <class Real>
PerturbedSequence<Real> simulate_failures(std::span<const FeatureMap<Real>> sequence, const FailureSimConfig& cfg) {
  if (sequence.size() < 2) throw std::invalid_argument("simulate_failures: sequence length must be >= 2");
  if (!(cfg.keep_ratio > 0.0 && cfg.keep_ratio <= 1.0))
    throw std::invalid_argument("simulate_failures: keep_ratio must lie in (0,1]");
  if (cfg.occlusion_prob < 0.0 || cfg.occlusion_prob > 1.0)
    throw std::invalid_argument("simulate_failures: occlusion_prob must lie in [0,1]");

  Rng rng(cfg.seed);
  const int n = static_cast<int>(sequence.size());
  int keep = static_cast<int>(std::llround(cfg.keep_ratio * n));
  keep = std::max(1, std::min(keep, n));

  std::vector<int> order(sequence.size());
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());

  PerturbedSequence<Real> out;
  out.kept_indices = order;
  for (std::size_t k = 0; k < order.size(); ++k) {
    FeatureMap<Real> frame = sequence[static_cast<std::size_t>(order[k])];
    if (rng.uniform() < cfg.occlusion_prob) {
      const int h = std::min(cfg.occlusion_h, frame.grid_h);
      const int w = std::min(cfg.occlusion_w, frame.grid_w);
      const int r0 = rng.uniform_int(frame.grid_h - h + 1);
      const int c0 = rng.uniform_int(frame.grid_w - w + 1);
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c)
          for (int ch = 0; ch < frame.channels(); ++ch) frame.data.at(r * frame.grid_w + c, ch) = Real(0);
      out.occlusions.push_back(OcclusionEvent{static_cast<int>(k), r0, c0, h, w});
    }
    out.frames.push_back(std::move(frame));
  }
  return out;
}

// ---- training and evaluation ----------------------------------------------

struct TomTrainConfig {
  int epochs = 10;
  int batch = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  double ema_decay = 0.99;
};

/// Adam at a constant learning rate on BCE-with-logits, shuffling each epoch.
template <class Real>
optim::TrainResult train_tom(TomModel<Real>& model, std::span<const TrackingPair<Real>> pairs,
                             const TomTrainConfig& cfg);

/// Classification accuracy at a fixed score threshold.
template <class Real>
double tom_accuracy(const TomModel<Real>& model, std::span<const TrackingPair<Real>> pairs, double threshold = 0.5);

/// Best-accuracy cosine threshold fitted on a calibration split.
template <class Real>
double fit_cosine_threshold(std::span<const TrackingPair<Real>> pairs);

template <class Real>
double cosine_accuracy(std::span<const TrackingPair<Real>> pairs, double threshold);

}  // namespace storm::tom
