#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "storm/prompts.hpp"

using namespace storm::prompts;
using storm::Mat;
using storm::Rng;

namespace {

BinaryMask random_mask(int rows, int cols, double density, Rng& rng) {
  BinaryMask m(rows, cols);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

struct BruteForce {
  Point center, top, bottom, left, right;
  Box bbox;
};

/// Independent recomputation over explicit index sets.
BruteForce brute(const BinaryMask& m) {
  BruteForce out;
  double sr = 0, sc = 0;
  long long n = 0;
  out.bbox = {m.rows, m.cols, -1, -1};
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
        out.bbox.min_row = std::min(out.bbox.min_row, r);
        out.bbox.min_col = std::min(out.bbox.min_col, c);
        out.bbox.max_row = std::max(out.bbox.max_row, r);
        out.bbox.max_col = std::max(out.bbox.max_col, c);
      }
  out.center = {sr / n, sc / n};
  auto centroid_over = [&](auto&& pred, Point fallback) {
    double ar = 0, ac = 0;
    long long cnt = 0;
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < m.cols; ++c)
        if (m.at(r, c) && pred(r, c)) {
          ar += r;
          ac += c;
          ++cnt;
        }
    return cnt ? Point{ar / cnt, ac / cnt} : fallback;
  };
  out.top = centroid_over([&](int r, int) { return r < out.center.row; }, out.center);
  out.bottom = centroid_over([&](int r, int) { return r >= out.center.row; }, out.center);
  out.left = centroid_over([&](int, int c) { return c < out.center.col; }, out.center);
  out.right = centroid_over([&](int, int c) { return c >= out.center.col; }, out.center);
  return out;
}

void check_close(const Point& a, const Point& b) {
  CHECK(a.row == doctest::Approx(b.row).epsilon(1e-12));
  CHECK(a.col == doctest::Approx(b.col).epsilon(1e-12));
}

}  // namespace

TEST_CASE("binarize") {
  SUBCASE("threshold is inclusive (>=)") {
    const Mat<double> h = Mat<double>::full(3, 3, 0.5);
    const auto m = binarize(h, 0.5);
    CHECK(m.count() == 9);
  }

  SUBCASE("threshold above the maximum empties the mask") {
    Mat<double> h = Mat<double>::full(3, 3, 0.2);
    h.at(1, 1) = 0.9;
    CHECK(binarize(h, 0.999).count() == 0);
  }

  SUBCASE("counting oracle on random heatmaps") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Mat<double> h(6, 7);
      for (auto& v : h.data) v = rng.uniform();
      const double thr = rng.uniform(0.2, 0.8);
      const auto m = binarize(h, thr);
      std::size_t want = 0;
      for (double v : h.data) want += v >= thr ? 1 : 0;
      CHECK(m.count() == want);
    }
  }

  SUBCASE("threshold outside (0,1) rejected") {
    const Mat<double> h = Mat<double>::full(2, 2, 0.5);
    CHECK_THROWS_AS(binarize(h, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(binarize(h, 1.0), std::invalid_argument);
  }
}

TEST_CASE("extract_prompts: degenerate single-pixel ROI") {
  BinaryMask m(8, 9);
  m.at(3, 5) = 1;
  const auto ps = extract_prompts(m);
  check_close(ps.center, {3, 5});
  check_close(ps.top, {3, 5});
  check_close(ps.bottom, {3, 5});
  check_close(ps.left, {3, 5});
  check_close(ps.right, {3, 5});
  CHECK(ps.bbox.min_row == 3);
  CHECK(ps.bbox.max_row == 3);
  CHECK(ps.bbox.min_col == 5);
  CHECK(ps.bbox.max_col == 5);
  // top and left are empty half-planes here; both fall back.
  CHECK(ps.fallbacks.size() == 2);
}

TEST_CASE("extract_prompts: symmetric square") {
  BinaryMask m(10, 10);
  for (int r = 2; r < 6; ++r)
    for (int c = 4; c < 8; ++c) m.at(r, c) = 1;
  const auto ps = extract_prompts(m);
  check_close(ps.center, {3.5, 5.5});
  // Mirror symmetry about the center row.
  CHECK(ps.center.row - ps.top.row == doctest::Approx(ps.bottom.row - ps.center.row).epsilon(1e-12));
  CHECK(ps.top.col == doctest::Approx(ps.bottom.col).epsilon(1e-12));
  CHECK(ps.bbox.min_row == 2);
  CHECK(ps.bbox.max_row == 5);
  CHECK(ps.bbox.min_col == 4);
  CHECK(ps.bbox.max_col == 7);
  CHECK(ps.fallbacks.empty());
}

TEST_CASE("extract_prompts equals the brute-force index-set oracle on random masks") {
  Rng rng(13);
  int tested = 0;
  while (tested < 300) {
    const auto m = random_mask(3 + rng.uniform_int(10), 3 + rng.uniform_int(10), rng.uniform(0.05, 0.8), rng);
    if (m.count() == 0) continue;
    ++tested;
    const auto got = extract_prompts(m);
    const auto want = brute(m);
    check_close(got.center, want.center);
    check_close(got.top, want.top);
    check_close(got.bottom, want.bottom);
    check_close(got.left, want.left);
    check_close(got.right, want.right);
    CHECK(got.bbox.min_row == want.bbox.min_row);
    CHECK(got.bbox.min_col == want.bbox.min_col);
    CHECK(got.bbox.max_row == want.bbox.max_row);
    CHECK(got.bbox.max_col == want.bbox.max_col);
  }
}

TEST_CASE("empty mask raises the empty-roi error") {
  BinaryMask m(4, 4);
  CHECK_THROWS_AS(extract_prompts(m), EmptyRoiError);
}

namespace {

struct RegionSums {
  long long num_r = 0, num_c = 0, count = 0;
};

/// Exact integer sums over a half-plane index set. The split line is the
/// rational centroid sum_r/n; comparing n*r < sum_r keeps it in integers.
template <class Pred>
RegionSums region_sums(const BinaryMask& m, Pred&& pred) {
  RegionSums s;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m.at(r, c) && pred(r, c)) {
        s.num_r += r;
        s.num_c += c;
        ++s.count;
      }
  return s;
}

}  // namespace

TEST_CASE("translation equivariance holds exactly on integer shifts") {
  // Exactness is asserted at the integer level: every index-set numerator
  // shifts by count*delta with no rounding anywhere, and the emitted points
  // are exactly numerator/count for both the original and the shifted mask.
  Rng rng(17);
  int tested = 0;
  while (tested < 50) {
    BinaryMask m(14, 14);
    // Content confined to the top-left so shifts stay in bounds.
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) m.at(r, c) = rng.uniform() < 0.5 ? 1 : 0;
    const int dr = rng.uniform_int(8), dc = rng.uniform_int(8);
    if (m.count() == 0) continue;
    ++tested;
    BinaryMask shifted(14, 14);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) shifted.at(r + dr, c + dc) = m.at(r, c);

    const auto a = extract_prompts(m);
    const auto b = extract_prompts(shifted);

    CHECK(b.bbox.min_row == a.bbox.min_row + dr);
    CHECK(b.bbox.max_row == a.bbox.max_row + dr);
    CHECK(b.bbox.min_col == a.bbox.min_col + dc);
    CHECK(b.bbox.max_col == a.bbox.max_col + dc);

    const auto all_a = region_sums(m, [](int, int) { return true; });
    const auto all_b = region_sums(shifted, [](int, int) { return true; });
    REQUIRE(all_a.count == all_b.count);
    CHECK(all_b.num_r == all_a.num_r + all_a.count * dr);
    CHECK(all_b.num_c == all_a.num_c + all_a.count * dc);
    CHECK(a.center.row == static_cast<double>(all_a.num_r) / all_a.count);
    CHECK(b.center.row == static_cast<double>(all_b.num_r) / all_b.count);
    CHECK(a.center.col == static_cast<double>(all_a.num_c) / all_a.count);
    CHECK(b.center.col == static_cast<double>(all_b.num_c) / all_b.count);

    // Half-plane membership shifts exactly: r < num_r/n iff n*r < num_r.
    const auto top_a = region_sums(m, [&](int r, int) { return static_cast<long long>(r) * all_a.count < all_a.num_r; });
    const auto top_b =
        region_sums(shifted, [&](int r, int) { return static_cast<long long>(r) * all_b.count < all_b.num_r; });
    CHECK(top_b.count == top_a.count);
    CHECK(top_b.num_r == top_a.num_r + top_a.count * dr);
    if (top_a.count > 0) {
      CHECK(a.top.row == static_cast<double>(top_a.num_r) / top_a.count);
      CHECK(b.top.row == static_cast<double>(top_b.num_r) / top_b.count);
      CHECK(a.top.col == static_cast<double>(top_a.num_c) / top_a.count);
      CHECK(b.top.col == static_cast<double>(top_b.num_c) / top_b.count);
    }
  }
}

TEST_CASE("center lies inside the bbox; quadrant centroids average back to the center") {
  Rng rng(19);
  int tested = 0;
  while (tested < 100) {
    const auto m = random_mask(9, 11, 0.3, rng);
    if (m.count() == 0) continue;
    ++tested;
    const auto ps = extract_prompts(m);
    CHECK(ps.center.row >= ps.bbox.min_row);
    CHECK(ps.center.row <= ps.bbox.max_row);
    CHECK(ps.center.col >= ps.bbox.min_col);
    CHECK(ps.center.col <= ps.bbox.max_col);

    // Cardinality-weighted mean of the four half-plane centroids.
    long long nt = 0, nb = 0, nl = 0, nr = 0;
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < m.cols; ++c)
        if (m.at(r, c)) {
          (r < ps.center.row ? nt : nb) += 1;
          (c < ps.center.col ? nl : nr) += 1;
        }
    const double total = static_cast<double>(nt + nb + nl + nr);
    const double wr = (nt * ps.top.row + nb * ps.bottom.row + nl * ps.left.row + nr * ps.right.row) / total;
    const double wc = (nt * ps.top.col + nb * ps.bottom.col + nl * ps.left.col + nr * ps.right.col) / total;
    CHECK(std::abs(wr - ps.center.row) < 1e-9);
    CHECK(std::abs(wc - ps.center.col) < 1e-9);
  }
}
