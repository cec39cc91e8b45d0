#include "storm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace storm::metrics {

namespace {

std::array<double, 3> transform(const Pose& p, const std::array<double, 3>& x) {
  const auto& R = p.rotation;
  return {R.at(0, 0) * x[0] + R.at(0, 1) * x[1] + R.at(0, 2) * x[2] + p.translation[0],
          R.at(1, 0) * x[0] + R.at(1, 1) * x[1] + R.at(1, 2) * x[2] + p.translation[1],
          R.at(2, 0) * x[0] + R.at(2, 1) * x[1] + R.at(2, 2) * x[2] + p.translation[2]};
}

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_model(const ModelPoints& m, const char* where) {
  if (m.points.empty()) throw std::invalid_argument(std::string(where) + ": empty model point set");
}

}  // namespace

ModelPoints ModelPoints::from_points(std::vector<std::array<double, 3>> pts) {
  ModelPoints m;
  m.points = std::move(pts);
  check_model(m, "ModelPoints::from_points");
  double d = 0;
  for (std::size_t i = 0; i < m.points.size(); ++i)
    for (std::size_t j = i + 1; j < m.points.size(); ++j) d = std::max(d, dist(m.points[i], m.points[j]));
  m.diameter = d;
  return m;
}

double add(const Pose& est, const Pose& gt, const ModelPoints& m) {
  check_model(m, "add");
  double acc = 0;
  for (const auto& x : m.points) acc += dist(transform(est, x), transform(gt, x));
  return acc / static_cast<double>(m.points.size());
}

double add_s(const Pose& est, const Pose& gt, const ModelPoints& m) {
  check_model(m, "add_s");
  std::vector<std::array<double, 3>> gt_pts;
  gt_pts.reserve(m.points.size());
  for (const auto& x : m.points) gt_pts.push_back(transform(gt, x));
  double acc = 0;
  for (const auto& x : m.points) {
    const auto e = transform(est, x);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gt_pts) best = std::min(best, dist(e, g));
    acc += best;
  }
  return acc / static_cast<double>(m.points.size());
}

double add_recall(std::span<const double> values, double threshold_fraction, double diameter) {
  if (values.empty()) throw std::invalid_argument("add_recall: empty value list");
  if (threshold_fraction <= 0) throw std::invalid_argument("add_recall: threshold fraction must be positive");
  const double thr = threshold_fraction * diameter;
  std::size_t hit = 0;
  for (double v : values)
    if (v < thr) ++hit;
  return static_cast<double>(hit) / static_cast<double>(values.size());
}

std::vector<double> iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

ApReport mean_ap(std::span<const DetectionRecord> detections) {
  ApReport report;

  // Stage 0: visibility filter, then top-100 per image by score with stable
  // tie-breaking on input order.
  struct Indexed {
    const DetectionRecord* rec;
    std::size_t order;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Indexed>> per_image;
  std::map<std::string, std::map<std::string, std::vector<const DetectionRecord*>>> retained;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    retained[d.dataset][d.category];  // every input category gets an entry
    if (d.visibility < 0.1) continue;
    per_image[{d.dataset, d.image}].push_back(Indexed{&d, i});
  }

  for (auto& [key, dets] : per_image) {
    std::stable_sort(dets.begin(), dets.end(), [](const Indexed& a, const Indexed& b) {
      if (a.rec->score != b.rec->score) return a.rec->score > b.rec->score;
      return a.order < b.order;
    });
    if (dets.size() > 100) dets.resize(100);
    for (const auto& d : dets) retained[d.rec->dataset][d.rec->category].push_back(d.rec);
  }

  const std::vector<double> thresholds = iou_thresholds();
  for (const auto& [dataset, categories] : retained) {
    double ap_sum = 0;
    int cat_count = 0;
    for (const auto& [category, dets] : categories) {
      if (dets.empty()) {
        report.warnings.push_back("excluded empty category " + category + " in " + dataset);
        continue;
      }
      double prec_sum = 0;
      for (double t : thresholds) {
        std::size_t correct = 0;
        for (const auto* d : dets)
          if (d->iou_with_gt >= t) ++correct;
        prec_sum += static_cast<double>(correct) / static_cast<double>(dets.size());
      }
      const double ap_c = prec_sum / static_cast<double>(thresholds.size());
      report.per_category[dataset][category] = ap_c;
      ap_sum += ap_c;
      ++cat_count;
    }
    if (cat_count > 0) report.per_dataset[dataset] = ap_sum / cat_count;
  }

  double total = 0;
  for (const auto& [_, ap] : report.per_dataset) total += ap;
  report.map = report.per_dataset.empty() ? 0.0 : total / static_cast<double>(report.per_dataset.size());
  return report;
}

double average_recall_over_thresholds(std::span<const double> recalls) {
  if (recalls.empty()) throw std::invalid_argument("average_recall_over_thresholds: empty recall curve");
  return std::accumulate(recalls.begin(), recalls.end(), 0.0) / static_cast<double>(recalls.size());
}

double ar_dataset(const std::map<std::string, std::vector<double>>& recall_tables) {
  double total = 0;
  for (const char* key : {"VSD", "MSSD", "MSPD"}) {
    const auto it = recall_tables.find(key);
    if (it == recall_tables.end())
      throw std::invalid_argument(std::string("ar_dataset: missing error-function table ") + key);
    total += average_recall_over_thresholds(it->second);
  }
  return total / 3.0;
}

double ar_overall(std::span<const double> per_dataset) {
  if (per_dataset.empty()) throw std::invalid_argument("ar_overall: no datasets");
  return std::accumulate(per_dataset.begin(), per_dataset.end(), 0.0) / static_cast<double>(per_dataset.size());
}

double add_surrogate_error(const Pose& est, const Pose& gt, const ModelPoints& m) {
  if (m.diameter <= 0) throw std::invalid_argument("add_surrogate_error: non-positive diameter");
  return add(est, gt, m) / m.diameter;
}

std::vector<double> recall_table(const PoseErrorFn& err, std::span<const std::pair<Pose, Pose>> pairs,
                                 const ModelPoints& m, std::span<const double> thresholds) {
  if (pairs.empty()) throw std::invalid_argument("recall_table: no pose pairs");
  std::vector<double> errors;
  errors.reserve(pairs.size());
  for (const auto& [est, gt] : pairs) errors.push_back(err(est, gt, m));
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    std::size_t hit = 0;
    for (double e : errors)
      if (e < t) ++hit;
    out.push_back(static_cast<double>(hit) / static_cast<double>(errors.size()));
  }
  return out;
}

}  // namespace storm::metrics
