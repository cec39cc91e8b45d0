#include "storm/prompts.hpp"

#include <limits>

namespace storm::prompts {

PromptSet extract_prompts(const BinaryMask& mask) {
  double row_sum = 0, col_sum = 0;
  long long n = 0;
  Box box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      ++n;
      row_sum += r;
      col_sum += c;
      box.min_row = std::min(box.min_row, r);
      box.min_col = std::min(box.min_col, c);
      box.max_row = std::max(box.max_row, r);
      box.max_col = std::max(box.max_col, c);
    }
  if (n == 0) throw EmptyRoiError();

  PromptSet out;
  out.center = {row_sum / n, col_sum / n};
  out.bbox = box;

  struct Acc {
    double r = 0, c = 0;
    long long n = 0;
  };
  Acc top, bottom, left, right;
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      Acc& vert = r < out.center.row ? top : bottom;
      Acc& horz = c < out.center.col ? left : right;
      vert.r += r;
      vert.c += c;
      ++vert.n;
      horz.r += r;
      horz.c += c;
      ++horz.n;
    }

  auto finish = [&](const Acc& a, const char* name) {
    if (a.n == 0) {
      out.fallbacks.push_back(name);
      return out.center;
    }
    return Point{a.r / a.n, a.c / a.n};
  };
  out.top = finish(top, "top");
  out.bottom = finish(bottom, "bottom");
  out.left = finish(left, "left");
  out.right = finish(right, "right");
  return out;
}

}  // namespace storm::prompts
