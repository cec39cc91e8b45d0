#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/mat.hpp"

namespace storm::prompts {

class EmptyRoiError : public std::runtime_error {
 public:
  EmptyRoiError() : std::runtime_error("empty ROI: no foreground pixels; caller must re-segment") {}
};

struct BinaryMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0) {}

  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }
};

struct Point {
  double row = 0;
  double col = 0;
};

/// Inclusive tight bounding box of the foreground.
struct Box {
  int min_row = 0, min_col = 0, max_row = 0, max_col = 0;
};

/// Segmentation prompts for a downstream segmenter: the overall centroid,
/// the four half-plane centroids around it, and the tight bounding box.
/// A quadrant with no pixels falls back to the overall centroid and is
/// reported in `fallbacks`.
struct PromptSet {
  Point center;
  Point top, bottom, left, right;
  Box bbox;
  std::vector<std::string> fallbacks;
};

/// mask = h >= threshold. threshold must lie in (0,1).
template <class Real>
BinaryMask binarize(const Mat<Real>& heatmap, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must be in (0,1)");
  BinaryMask m(heatmap.rows, heatmap.cols);
  for (std::size_t i = 0; i < heatmap.data.size(); ++i)
    m.data[i] = static_cast<double>(heatmap.data[i]) >= threshold ? 1 : 0;
  return m;
}

/// Throws EmptyRoiError on an all-zero mask. Quadrants are half-plane splits
/// through the centroid; pixels exactly on a split line go to bottom/right.
PromptSet extract_prompts(const BinaryMask& mask);

}  // namespace storm::prompts
