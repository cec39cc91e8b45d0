#include "storm/tom.hpp"

#include <algorithm>
#include <cmath>

#include "storm/losses.hpp"

namespace storm::tom {

namespace {

constexpr double kPi = 3.141592653589793238462643383279;

}  // namespace

geometry::Vec3 random_direction(Rng& rng) {
  for (;;) {
    const geometry::Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = v.norm();
    if (n > 1e-9) return {v.x / n, v.y / n, v.z / n};
  }
}

geometry::Vec3 perturb_direction(const geometry::Vec3& d, double angle, Rng& rng) {
  for (;;) {
    const geometry::Vec3 g{rng.normal(), rng.normal(), rng.normal()};
    const double proj = g.dot(d);
    const geometry::Vec3 u{g.x - proj * d.x, g.y - proj * d.y, g.z - proj * d.z};
    const double n = u.norm();
    if (n <= 1e-9) continue;
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * d.x + s * u.x / n, c * d.y + s * u.y / n, c * d.z + s * u.z / n};
  }
}

template <class Real>
TrackingDatasetGenerator<Real>::TrackingDatasetGenerator(TrackingDatasetConfig cfg) : cfg_(cfg) {
  if (cfg.archetype_count < 2)
    throw std::invalid_argument("TrackingDatasetGenerator: need at least 2 archetypes");
  if (cfg.pair_count < 0) throw std::invalid_argument("TrackingDatasetGenerator: negative pair count");
  if (cfg.grid < 2 || cfg.channels < 1) throw std::invalid_argument("TrackingDatasetGenerator: bad grid/channels");
  if (cfg.drift_min_shift < 1 || cfg.drift_min_shift > cfg.drift_max_shift || cfg.drift_max_shift >= cfg.grid)
    throw std::invalid_argument("TrackingDatasetGenerator: bad drift shift range");
  const double wsum = cfg.cross_weight + cfg.drift_weight + cfg.rotation_weight;
  if (!(wsum > 0) || cfg.cross_weight < 0 || cfg.drift_weight < 0 || cfg.rotation_weight < 0)
    throw std::invalid_argument("TrackingDatasetGenerator: bad negative-kind weights");
  typename ArchetypeLibrary<Real>::Scales scales;
  scales.foreground = cfg.foreground_scale;
  scales.mu = cfg.mu_scale;
  scales.pattern = cfg.pattern_scale;
  scales.view = cfg.view_scale;
  scales.noise = cfg.noise_sigma;
  lib_ = ArchetypeLibrary<Real>::make(cfg.archetype_count, cfg.grid, cfg.channels,
                                      Rng::derive(cfg.seed, 0x4c4942ull), scales);
}

template <class Real>
TrackingPair<Real> TrackingDatasetGenerator<Real>::pair(int index) const {
  if (index < 0 || index >= cfg_.pair_count) throw std::invalid_argument("TrackingDatasetGenerator::pair: index out of range");
  const std::uint64_t pair_seed = Rng::derive(cfg_.seed, static_cast<std::uint64_t>(index));
  Rng rng(pair_seed);

  TrackingPair<Real> out;
  out.seed = pair_seed;
  out.reference_object = rng.uniform_int(cfg_.archetype_count);
  const geometry::Vec3 d_ref = random_direction(rng);
  out.reference = lib_.sample(out.reference_object, d_ref, rng);

  const double pos_max = cfg_.positive_max_angle_deg * kPi / 180.0;
  const double rot_min = cfg_.rotation_min_angle_deg * kPi / 180.0;

  if (index % 2 == 0) {
    out.label = 1;
    out.kind = PairKind::Positive;
    out.candidate_object = out.reference_object;
    const geometry::Vec3 d = perturb_direction(d_ref, rng.uniform(0.0, pos_max), rng);
    out.candidate = lib_.sample(out.candidate_object, d, rng);
    return out;
  }

  out.label = 0;
  const double wsum = cfg_.cross_weight + cfg_.drift_weight + cfg_.rotation_weight;
  const double u = rng.uniform() * wsum;
  if (u < cfg_.cross_weight) {
    out.kind = PairKind::CrossObject;
    int other = rng.uniform_int(cfg_.archetype_count - 1);
    if (other >= out.reference_object) ++other;
    out.candidate_object = other;
    out.candidate = lib_.sample(other, random_direction(rng), rng);
  } else if (u < cfg_.cross_weight + cfg_.drift_weight) {
    out.kind = PairKind::Drift;
    out.candidate_object = out.reference_object;
    const geometry::Vec3 d = perturb_direction(d_ref, rng.uniform(0.0, pos_max), rng);
    const Mat<Real> base = lib_.sample(out.candidate_object, d, rng);
    int dr = 0, dc = 0;
    do {
      dr = rng.uniform_int(2 * cfg_.drift_max_shift + 1) - cfg_.drift_max_shift;
      dc = rng.uniform_int(2 * cfg_.drift_max_shift + 1) - cfg_.drift_max_shift;
    } while (std::abs(dr) + std::abs(dc) < cfg_.drift_min_shift);
    const int g = cfg_.grid;
    Mat<Real> shifted(g * g, cfg_.channels);
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        const int sr = r - dr, sc = c - dc;
        for (int ch = 0; ch < cfg_.channels; ++ch) {
          // Crops are ROI-masked windows, so cells the object slid out of
          // hold no content.
          shifted.at(r * g + c, ch) =
              (sr >= 0 && sr < g && sc >= 0 && sc < g) ? base.at(sr * g + sc, ch) : Real(0);
        }
      }
    out.candidate = std::move(shifted);
  } else {
    out.kind = PairKind::RotationLoss;
    out.candidate_object = out.reference_object;
    const geometry::Vec3 d = perturb_direction(d_ref, rng.uniform(rot_min, kPi), rng);
    out.candidate = lib_.sample(out.candidate_object, d, rng);
  }
  return out;
}

template <class Real>
optim::TrainResult train_tom(TomModel<Real>& model, std::span<const TrackingPair<Real>> pairs,
                             const TomTrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("train_tom: empty dataset");
  if (cfg.batch < 1 || cfg.epochs < 1) throw std::invalid_argument("train_tom: bad batch/epochs");

  optim::Adam<Real> adam(model.parameters());
  optim::TrainResult result;
  double ema = 0;
  int step = 0;

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x54524f4dull));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(static_cast<int>(i + 1))]);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));

      Tape<Real> t;
      LeafBinding<Real> lb;
      std::vector<storm::BoundAttention> blocks;
      for (const auto& l : model.layers) blocks.push_back(bind_attention(t, lb, l));
      const int w = lb.bind(t, model.w);
      const int b = lb.bind(t, model.b);

      std::vector<int> logits;
      Mat<Real> labels(static_cast<int>(end - start), 1);
      for (std::size_t k = start; k < end; ++k) {
        const TrackingPair<Real>& p = pairs[order[k]];
        const std::array<int, 2> parts{t.leaf(p.candidate), t.leaf(p.reference)};
        int x = storm::ops::concat_rows<Real>(t, parts);
        for (const auto& blk : blocks) x = storm::ops::attention_block(t, x, x, blk);
        const int pooled = storm::ops::mean_rows(t, x);
        logits.push_back(storm::ops::linear(t, pooled, w, b));
        labels.at(static_cast<int>(k - start), 0) = static_cast<Real>(p.label);
      }
      const int z = storm::ops::concat_rows<Real>(t, logits);
      const auto bce = loss::bce_with_logits(t.value(z), labels);
      if (!std::isfinite(bce.value)) {
        result.diverged = true;
        return result;
      }
      t.backward(z, bce.grad);
      adam.step(lb.grads(t), static_cast<Real>(cfg.learning_rate));

      ema = step == 0 ? bce.value : cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * bce.value;
      result.trace.push_back(optim::TraceRow{step, bce.value, ema});
      ++step;
    }
  }
  result.steps_run = step;
  return result;
}

template <class Real>
double tom_accuracy(const TomModel<Real>& model, std::span<const TrackingPair<Real>> pairs, double threshold) {
  if (pairs.empty()) throw std::invalid_argument("tom_accuracy: empty pair set");
  std::size_t hit = 0;
  for (const auto& p : pairs) {
    const double score = tom_forward(model, p.candidate, p.reference).score;
    const bool predicted = score >= threshold;
    if (predicted == (p.label != 0)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

namespace {

template <class Real>
std::vector<std::pair<double, std::uint8_t>> cosine_scores(std::span<const TrackingPair<Real>> pairs) {
  std::vector<std::pair<double, std::uint8_t>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    CropFeature<Real> cand{p.candidate, -1, p.candidate_object};
    CropFeature<Real> ref{p.reference, -1, p.reference_object};
    out.emplace_back(cosine_verify(cand, ref), p.label);
  }
  return out;
}

}  // namespace

template <class Real>
double fit_cosine_threshold(std::span<const TrackingPair<Real>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("fit_cosine_threshold: empty pair set");
  auto scored = cosine_scores(pairs);
  std::sort(scored.begin(), scored.end());
  const std::size_t n = scored.size();
  std::size_t total_pos = 0;
  for (const auto& [s, y] : scored) total_pos += y;

  // Threshold candidates sit between consecutive scores; classify score >= t
  // as positive. Sweep from "everything positive" upward.
  double best_thr = scored.front().first - 1.0;
  std::size_t best_hit = total_pos;  // all predicted positive
  std::size_t neg_below = 0, pos_below = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scored[i].second)
      ++pos_below;
    else
      ++neg_below;
    const std::size_t hit = neg_below + (total_pos - pos_below);
    if (hit > best_hit) {
      best_hit = hit;
      best_thr = i + 1 < n ? 0.5 * (scored[i].first + scored[i + 1].first) : scored[i].first + 1.0;
    }
  }
  return best_thr;
}

template <class Real>
double cosine_accuracy(std::span<const TrackingPair<Real>> pairs, double threshold) {
  if (pairs.empty()) throw std::invalid_argument("cosine_accuracy: empty pair set");
  std::size_t hit = 0;
  for (const auto& [score, label] : cosine_scores(pairs)) {
    const bool predicted = score >= threshold;
    if (predicted == (label != 0)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

template class TrackingDatasetGenerator<float>;
template class TrackingDatasetGenerator<double>;

template optim::TrainResult train_tom<float>(TomModel<float>&, std::span<const TrackingPair<float>>, const TomTrainConfig&);
template optim::TrainResult train_tom<double>(TomModel<double>&, std::span<const TrackingPair<double>>, const TomTrainConfig&);

template double tom_accuracy<float>(const TomModel<float>&, std::span<const TrackingPair<float>>, double);
template double tom_accuracy<double>(const TomModel<double>&, std::span<const TrackingPair<double>>, double);

template double fit_cosine_threshold<float>(std::span<const TrackingPair<float>>);
template double fit_cosine_threshold<double>(std::span<const TrackingPair<double>>);

template double cosine_accuracy<float>(std::span<const TrackingPair<float>>, double);
template double cosine_accuracy<double>(std::span<const TrackingPair<double>>, double);

}  // namespace storm::tom
