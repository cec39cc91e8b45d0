#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/mat.hpp"

namespace storm::optim {

/// Linear warm-up to eta0, then cosine annealing to zero at total_steps.
struct LrSchedule {
  double eta0 = 0.01;
  int warmup_steps = 5000;
  int total_steps = 80000;

  void validate() const {
    if (!(warmup_steps > 0 && warmup_steps < total_steps))
      throw std::invalid_argument("LrSchedule: require 0 < warmup_steps < total_steps");
  }
};

struct LrResult {
  double eta = 0;
  bool clamped = false;  // t > total_steps was clamped to the final value
};

inline LrResult lr_at_checked(const LrSchedule& s, long long t) {
  s.validate();
  if (t < 0) throw std::invalid_argument("lr_at: negative step");
  LrResult r;
  if (t > s.total_steps) {
    r.clamped = true;
    t = s.total_steps;
  }
  if (t < s.warmup_steps) {
    r.eta = s.eta0 * static_cast<double>(t) / static_cast<double>(s.warmup_steps);
  } else {
    const double x = static_cast<double>(t - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    r.eta = 0.5 * s.eta0 * (1.0 + std::cos(x * 3.141592653589793238462643383279));
  }
  return r;
}

inline double lr_at(const LrSchedule& s, long long t) { return lr_at_checked(s, t).eta; }

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
template <class Real>
double clip_grad_norm(std::vector<Mat<Real>>& grads, double max_norm) {
  if (max_norm <= 0) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& g : grads)
    for (Real v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

template <class Real>
struct AdamConfig {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// Adam with bias correction:
///   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
///   mhat = m/(1-b1^t);     vhat = v/(1-b2^t)
///   theta <- theta - eta * mhat/(sqrt(vhat)+eps)
/// A non-finite gradient aborts the step with parameters untouched.
template <class Real>
class Adam {
 public:
  Adam(std::vector<Mat<Real>*> params, AdamConfig<Real> cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const Mat<Real>* p : params_) {
      m_.push_back(Mat<Real>::zeros(p->rows, p->cols));
      v_.push_back(Mat<Real>::zeros(p->rows, p->cols));
    }
  }

  long long step_count() const { return t_; }
  const std::vector<Mat<Real>*>& params() const { return params_; }

  void step(std::span<const Mat<Real>> grads, Real eta) {
    check_grads(grads);
    ++t_;
    const Real c1 = Real(1) - std::pow(cfg_.beta1, static_cast<Real>(t_));
    const Real c2 = Real(1) - std::pow(cfg_.beta2, static_cast<Real>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Mat<Real>& p = *params_[k];
      const Mat<Real>& g = grads[k];
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const Real gi = g.data[i];
        m_[k].data[i] = cfg_.beta1 * m_[k].data[i] + (Real(1) - cfg_.beta1) * gi;
        v_[k].data[i] = cfg_.beta2 * v_[k].data[i] + (Real(1) - cfg_.beta2) * gi * gi;
        const Real mhat = m_[k].data[i] / c1;
        const Real vhat = v_[k].data[i] / c2;
        p.data[i] -= eta * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  void check_grads(std::span<const Mat<Real>> grads) const {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
      if (!grads[k].same_shape(*params_[k])) throw std::invalid_argument("Adam::step: gradient shape mismatch");
      if (!grads[k].all_finite()) throw NumericError("Adam::step: non-finite gradient; step aborted");
    }
  }

  std::vector<Mat<Real>*> params_;
  AdamConfig<Real> cfg_;
  std::vector<Mat<Real>> m_, v_;
  long long t_ = 0;
};

/// Plain SGD (momentum 0, no weight decay).
template <class Real>
class Sgd {
 public:
  explicit Sgd(std::vector<Mat<Real>*> params) : params_(std::move(params)) {}

  const std::vector<Mat<Real>*>& params() const { return params_; }

  void step(std::span<const Mat<Real>> grads, Real eta) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Sgd::step: gradient count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
      if (!grads[k].same_shape(*params_[k])) throw std::invalid_argument("Sgd::step: gradient shape mismatch");
      if (!grads[k].all_finite()) throw NumericError("Sgd::step: non-finite gradient; step aborted");
    }
    for (std::size_t k = 0; k < grads.size(); ++k) {
      Mat<Real>& p = *params_[k];
      for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= eta * grads[k].data[i];
    }
  }

 private:
  std::vector<Mat<Real>*> params_;
};

struct TrainConfig {
  std::string optimizer = "adam";  // "adam" | "sgd"
  double eta0 = 0.01;
  int warmup_steps = 50;
  int total_steps = 1000;
  int batch = 1;
  std::uint64_t seed = 0;
  std::string loss_preset = "default";
  double clip_max_norm = 0.1;
  double ema_decay = 0.99;
};

struct TraceRow {
  int step = 0;
  double loss = 0;
  double ema = 0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  bool diverged = false;
  int steps_run = 0;
};

/// Generic training loop: per step the callback fills `grads` (parameter
/// order) and returns the batch loss; gradients are clipped, the scheduled
/// learning rate applied, and the loss trace recorded with an EMA
/// (ema_t = decay*ema_{t-1} + (1-decay)*loss_t, seeded with the first loss).
/// A non-finite loss aborts with the trace collected so far.
/// The optional `stop` callback, checked after each step, ends training early.
template <class Real, class StepFn>
TrainResult fit(std::vector<Mat<Real>*> params, StepFn&& step_fn, const TrainConfig& cfg,
                const std::function<bool(int, const TrainResult&)>& stop = nullptr) {
  LrSchedule sched{cfg.eta0, cfg.warmup_steps, cfg.total_steps};
  sched.validate();

  const bool use_adam = cfg.optimizer == "adam";
  if (!use_adam && cfg.optimizer != "sgd") throw std::invalid_argument("fit: unknown optimizer " + cfg.optimizer);
  std::optional<Adam<Real>> adam;
  std::optional<Sgd<Real>> sgd;
  if (use_adam)
    adam.emplace(params);
  else
    sgd.emplace(params);

  std::vector<Mat<Real>> grads;
  for (const Mat<Real>* p : params) grads.push_back(Mat<Real>::zeros(p->rows, p->cols));

  TrainResult result;
  double ema = 0;
  Rng rng(cfg.seed);
  for (int step = 0; step < cfg.total_steps; ++step) {
    for (auto& g : grads) g.fill(Real(0));
    const double loss = step_fn(step, rng, grads);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      return result;
    }
    ema = step == 0 ? loss : cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * loss;
    result.trace.push_back(TraceRow{step, loss, ema});

    clip_grad_norm(grads, cfg.clip_max_norm);
    const double eta = lr_at(sched, step);
    if (use_adam)
      adam->step(grads, static_cast<Real>(eta));
    else
      sgd->step(grads, static_cast<Real>(eta));
    result.steps_run = step + 1;
    if (stop && stop(step, result)) break;
  }
  return result;
}

}  // namespace storm::optim
