#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/mat.hpp"

namespace storm::loss {

inline constexpr double kTverskySmooth = 1e-6;
inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
  double alpha = 0.3;     // Tversky false-negative weight
  double beta = 0.7;      // Tversky false-positive weight
  double gamma = 2.0;     // focal exponent
  double lambda_t = 1.0;  // Tversky term weight
  double lambda_f = 0.2;  // focal term weight
};

template <class Real>
struct ValueGrad {
  double value = 0;
  Mat<Real> grad;  // dL/dp, same shape as p
};

namespace detail {

template <class Real>
void check_pair(const Mat<Real>& p, const Mat<Real>& t, const char* where) {
  if (!p.same_shape(t)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
  for (Real v : p.data)
    if (!(v >= Real(0) && v <= Real(1))) throw std::invalid_argument(std::string(where) + ": p outside [0,1]");
  for (Real v : t.data)
    if (v != Real(0) && v != Real(1)) throw std::invalid_argument(std::string(where) + ": t not binary");
}

}  // namespace detail

/// Tversky loss 1 - TP/(TP + alpha*FN + beta*FP) with soft counts
/// TP = sum(p*t), FN = sum((1-p)*t), FP = sum(p*(1-t)). A vanishing
/// denominator (empty target and empty prediction) is defined as loss 0.
template <class Real>
ValueGrad<Real> tversky_loss(const Mat<Real>& p, const Mat<Real>& t, const LossWeights& w) {
  detail::check_pair(p, t, "tversky_loss");
  double tp = 0, fn = 0, fp = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double pi = p.data[i], ti = t.data[i];
    tp += pi * ti;
    fn += (1.0 - pi) * ti;
    fp += pi * (1.0 - ti);
  }
  ValueGrad<Real> out;
  out.grad = Mat<Real>::zeros(p.rows, p.cols);
  const double denom = tp + w.alpha * fn + w.beta * fp;
  if (denom <= kTverskySmooth) {
    out.value = 0.0;
    return out;
  }
  out.value = 1.0 - tp / denom;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double ti = t.data[i];
    const double ddenom = ti - w.alpha * ti + w.beta * (1.0 - ti);
    out.grad.data[i] = static_cast<Real>(-(ti * denom - tp * ddenom) / (denom * denom));
  }
  return out;
}

/// Focal loss, mean over pixels:
///   -a_pos*(1-p)^g * t * ln p  -  a_neg*p^g * (1-t) * ln(1-p)
/// with p clamped to [kProbClamp, 1-kProbClamp]. The balance factors default
/// to 1 (unbalanced form); gamma = 0 reduces to binary cross-entropy.
template <class Real>
ValueGrad<Real> focal_loss(const Mat<Real>& p, const Mat<Real>& t, double gamma, double a_pos = 1.0,
                           double a_neg = 1.0) {
  detail::check_pair(p, t, "focal_loss");
  if (gamma < 0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  ValueGrad<Real> out;
  out.grad = Mat<Real>::zeros(p.rows, p.cols);
  const double n = static_cast<double>(p.data.size());
  double acc = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double raw = p.data[i];
    const double q = std::min(1.0 - kProbClamp, std::max(kProbClamp, raw));
    const double ti = t.data[i];
    const double lq = std::log(q), l1q = std::log(1.0 - q);
    const double wq = std::pow(1.0 - q, gamma), wp = std::pow(q, gamma);
    acc += -a_pos * wq * ti * lq - a_neg * wp * (1.0 - ti) * l1q;
    if (raw > kProbClamp && raw < 1.0 - kProbClamp) {
      const double dpos = gamma * std::pow(1.0 - q, gamma - 1.0) * lq - wq / q;
      const double dneg = -gamma * std::pow(q, gamma - 1.0) * l1q + wp / (1.0 - q);
      out.grad.data[i] = static_cast<Real>((a_pos * ti * dpos + a_neg * (1.0 - ti) * dneg) / n);
    }
  }
  out.value = acc / n;
  return out;
}

/// lambda_t * tversky + lambda_f * focal, summed over batch items.
template <class Real>
struct BatchValueGrad {
  double value = 0;
  std::vector<Mat<Real>> grads;
};

template <class Real>
BatchValueGrad<Real> composite_roi_loss(std::span<const Mat<Real>> p, std::span<const Mat<Real>> t,
                                        const LossWeights& w) {
  if (p.size() != t.size()) throw std::invalid_argument("composite_roi_loss: batch size mismatch");
  BatchValueGrad<Real> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto tv = tversky_loss(p[i], t[i], w);
    auto fo = focal_loss(p[i], t[i], w.gamma);
    out.value += w.lambda_t * tv.value + w.lambda_f * fo.value;
    Mat<Real> g = Mat<Real>::zeros(p[i].rows, p[i].cols);
    for (std::size_t k = 0; k < g.data.size(); ++k)
      g.data[k] = static_cast<Real>(w.lambda_t) * tv.grad.data[k] + static_cast<Real>(w.lambda_f) * fo.grad.data[k];
    out.grads.push_back(std::move(g));
  }
  return out;
}

/// Numerically stable binary cross-entropy on logits, mean over the batch:
///   (1/N) sum_i [ max(z_i,0) - z_i*y_i + log(1 + exp(-|z_i|)) ]
/// Gradient dL/dz_i = (sigmoid(z_i) - y_i)/N.
template <class Real>
ValueGrad<Real> bce_with_logits(const Mat<Real>& z, const Mat<Real>& y) {
  if (!z.same_shape(y)) throw std::invalid_argument("bce_with_logits: shape mismatch");
  if (!z.all_finite()) throw std::invalid_argument("bce_with_logits: non-finite logits");
  for (Real v : y.data)
    if (v != Real(0) && v != Real(1)) throw std::invalid_argument("bce_with_logits: labels not binary");
  ValueGrad<Real> out;
  out.grad = Mat<Real>::zeros(z.rows, z.cols);
  const double n = static_cast<double>(z.data.size());
  double acc = 0;
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    const double zi = z.data[i], yi = y.data[i];
    acc += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    const double sig = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
    out.grad.data[i] = static_cast<Real>((sig - yi) / n);
  }
  out.value = acc / n;
  return out;
}

/// Soft Dice loss 1 - (2*sum(pt)+k)/(sum(p)+sum(t)+k).
template <class Real>
ValueGrad<Real> dice_loss(const Mat<Real>& p, const Mat<Real>& t) {
  detail::check_pair(p, t, "dice_loss");
  double inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    inter += static_cast<double>(p.data[i]) * t.data[i];
    sp += p.data[i];
    st += t.data[i];
  }
  const double num = 2.0 * inter + kTverskySmooth;
  const double den = sp + st + kTverskySmooth;
  ValueGrad<Real> out;
  out.value = 1.0 - num / den;
  out.grad = Mat<Real>::zeros(p.rows, p.cols);
  for (std::size_t i = 0; i < p.data.size(); ++i)
    out.grad.data[i] = static_cast<Real>(-(2.0 * t.data[i] * den - num) / (den * den));
  return out;
}

/// Soft IoU loss 1 - (sum(pt)+k)/(sum(p)+sum(t)-sum(pt)+k).
template <class Real>
ValueGrad<Real> iou_loss(const Mat<Real>& p, const Mat<Real>& t) {
  detail::check_pair(p, t, "iou_loss");
  double inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    inter += static_cast<double>(p.data[i]) * t.data[i];
    sp += p.data[i];
    st += t.data[i];
  }
  const double num = inter + kTverskySmooth;
  const double den = sp + st - inter + kTverskySmooth;
  ValueGrad<Real> out;
  out.value = 1.0 - num / den;
  out.grad = Mat<Real>::zeros(p.rows, p.cols);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double ti = t.data[i];
    out.grad.data[i] = static_cast<Real>(-(ti * den - num * (1.0 - ti)) / (den * den));
  }
  return out;
}

/// A named mix of segmentation loss terms. "default" is the Tversky+focal
/// composite; "appendix-training" is the alternative recipe with a balanced
/// focal term plus Dice and IoU terms.
struct LossPreset {
  std::string name = "default";
  double tversky_weight = 1.0, tversky_alpha = 0.3, tversky_beta = 0.7;
  double focal_weight = 0.2, focal_gamma = 2.0, focal_balance_pos = 1.0, focal_balance_neg = 1.0;
  double dice_weight = 0.0, iou_weight = 0.0;

  static LossPreset default_preset() { return LossPreset{}; }

  static LossPreset appendix_training() {
    LossPreset p;
    p.name = "appendix-training";
    p.tversky_weight = 0.2;
    p.tversky_alpha = 0.5;
    p.tversky_beta = 0.5;
    p.focal_weight = 20.0;
    p.focal_gamma = 2.0;
    p.focal_balance_pos = 0.25;
    p.focal_balance_neg = 0.75;
    p.dice_weight = 1.0;
    p.iou_weight = 1.0;
    return p;
  }

  static LossPreset by_name(const std::string& name) {
    if (name == "default") return default_preset();
    if (name == "appendix-training") return appendix_training();
    throw std::invalid_argument("unknown loss preset: " + name);
  }
};

template <class Real>
ValueGrad<Real> preset_loss(const Mat<Real>& p, const Mat<Real>& t, const LossPreset& ps) {
  LossWeights w;
  w.alpha = ps.tversky_alpha;
  w.beta = ps.tversky_beta;
  ValueGrad<Real> out;
  out.value = 0;
  out.grad = Mat<Real>::zeros(p.rows, p.cols);
  auto accumulate = [&](const ValueGrad<Real>& term, double weight) {
    if (weight == 0.0) return;
    out.value += weight * term.value;
    for (std::size_t i = 0; i < out.grad.data.size(); ++i)
      out.grad.data[i] += static_cast<Real>(weight) * term.grad.data[i];
  };
  accumulate(tversky_loss(p, t, w), ps.tversky_weight);
  accumulate(focal_loss(p, t, ps.focal_gamma, ps.focal_balance_pos, ps.focal_balance_neg), ps.focal_weight);
  if (ps.dice_weight != 0.0) accumulate(dice_loss(p, t), ps.dice_weight);
  if (ps.iou_weight != 0.0) accumulate(iou_loss(p, t), ps.iou_weight);
  return out;
}

}  // namespace storm::loss
