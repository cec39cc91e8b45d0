#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "storm/geometry.hpp"

namespace storm::metrics {

struct Pose {
  geometry::Rot3 rotation;
  std::array<double, 3> translation{0, 0, 0};
};

struct ModelPoints {
  std::vector<std::array<double, 3>> points;
  double diameter = 0;  // max pairwise distance

  /// Computes the diameter from the points (O(N^2)).
  static ModelPoints from_points(std::vector<std::array<double, 3>> pts);
};

/// Mean distance of model points between the two poses.
double add(const Pose& est, const Pose& gt, const ModelPoints& m);

/// Symmetric variant: mean nearest-point distance.
double add_s(const Pose& est, const Pose& gt, const ModelPoints& m);

/// Fraction of error values strictly below threshold_fraction * diameter.
double add_recall(std::span<const double> values, double threshold_fraction, double diameter);

// ---- detection mAP -------------------------------------------------------

struct DetectionRecord {
  std::string dataset;
  std::string image;
  std::string category;
  double score = 0;
  double iou_with_gt = 0;  // in [0,1]
  double visibility = 1;   // in [0,1]
};

struct ApReport {
  // dataset -> category -> AP_c
  std::map<std::string, std::map<std::string, double>> per_category;
  // dataset -> AP_d
  std::map<std::string, double> per_dataset;
  double map = 0;
  std::vector<std::string> warnings;  // e.g. categories excluded as empty
};

/// IoU threshold ladder {0.50, 0.55, ..., 0.95}.
std::vector<double> iou_thresholds();

/// Three-stage mAP: records with visibility < 0.1 are excluded, the top-100
/// predictions per image (by score, ties broken by input order) are kept,
/// AP_c averages thresholded precision over the IoU ladder, AP_d averages
/// over categories, mAP averages over datasets. Categories left empty after
/// filtering are excluded with a warning rather than zero-filled.
ApReport mean_ap(std::span<const DetectionRecord> detections);

// ---- average recall ------------------------------------------------------

/// AR_e: mean recall over an error function's threshold set.
double average_recall_over_thresholds(std::span<const double> recalls);

/// AR_d = (AR_VSD + AR_MSSD + AR_MSPD)/3. The map must contain exactly the
/// keys "VSD", "MSSD" and "MSPD"; each value is that error function's recall
/// curve. Throws std::invalid_argument when a table is missing.
double ar_dataset(const std::map<std::string, std::vector<double>>& recall_tables);

/// AR over datasets: mean of per-dataset AR_d values.
double ar_overall(std::span<const double> per_dataset);

/// Pose error function used to build recall curves; the BOP error functions
/// (VSD/MSSD/MSPD) are supplied by callers, while `add_surrogate_error`
/// offers a bundled diameter-normalized stand-in for end-to-end tests.
using PoseErrorFn = std::function<double(const Pose& est, const Pose& gt, const ModelPoints& m)>;

double add_surrogate_error(const Pose& est, const Pose& gt, const ModelPoints& m);

/// Recall at each threshold: fraction of pose pairs with error < threshold.
std::vector<double> recall_table(const PoseErrorFn& err, std::span<const std::pair<Pose, Pose>> pairs,
                                 const ModelPoints& m, std::span<const double> thresholds);

}  // namespace storm::metrics
