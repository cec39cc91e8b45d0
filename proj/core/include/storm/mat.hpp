#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace storm {

/// Dense row-major matrix. Vectors are represented as 1xN or Nx1 matrices.
template <class Real>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<Real> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), Real(0)) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
  }

  static Mat zeros(int r, int c) { return Mat(r, c); }

  static Mat full(int r, int c, Real v) {
    Mat m(r, c);
    m.data.assign(m.data.size(), v);
    return m;
  }

  Real& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  Real at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Mat& operator+=(const Mat& o) {
    require_same_shape(o, "Mat::operator+=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  Mat& operator*=(Real s) {
    for (Real& v : data) v *= s;
    return *this;
  }

  void fill(Real v) { data.assign(data.size(), v); }

  void require_same_shape(const Mat& o, const char* where) const {
    if (!same_shape(o)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
  }

  template <class Other>
  Mat<Other> cast() const {
    Mat<Other> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && data == o.data; }
};

// out += a * b
template <class Real>
void matmul_acc(const Mat<Real>& a, const Mat<Real>& b, Mat<Real>& out) {
  if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols)
    throw std::invalid_argument("matmul: shape mismatch");
  for (int i = 0; i < a.rows; ++i) {
    const Real* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    Real* orow = &out.data[static_cast<std::size_t>(i) * out.cols];
    for (int k = 0; k < a.cols; ++k) {
      const Real aik = arow[k];
      if (aik == Real(0)) continue;
      const Real* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

template <class Real>
Mat<Real> matmul(const Mat<Real>& a, const Mat<Real>& b) {
  Mat<Real> out(a.rows, b.cols);
  matmul_acc(a, b, out);
  return out;
}

// out += a * b^T
template <class Real>
void matmul_bt_acc(const Mat<Real>& a, const Mat<Real>& b, Mat<Real>& out) {
  if (a.cols != b.cols || out.rows != a.rows || out.cols != b.rows)
    throw std::invalid_argument("matmul_bt: shape mismatch");
  for (int i = 0; i < a.rows; ++i) {
    const Real* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    Real* orow = &out.data[static_cast<std::size_t>(i) * out.cols];
    for (int j = 0; j < b.rows; ++j) {
      const Real* brow = &b.data[static_cast<std::size_t>(j) * b.cols];
      Real acc = 0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
}

template <class Real>
Mat<Real> matmul_bt(const Mat<Real>& a, const Mat<Real>& b) {
  Mat<Real> out(a.rows, b.rows);
  matmul_bt_acc(a, b, out);
  return out;
}

// out += a^T * b
template <class Real>
void matmul_tn_acc(const Mat<Real>& a, const Mat<Real>& b, Mat<Real>& out) {
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols)
    throw std::invalid_argument("matmul_tn: shape mismatch");
  for (int k = 0; k < a.rows; ++k) {
    const Real* arow = &a.data[static_cast<std::size_t>(k) * a.cols];
    const Real* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
    for (int i = 0; i < a.cols; ++i) {
      const Real aki = arow[i];
      if (aki == Real(0)) continue;
      Real* orow = &out.data[static_cast<std::size_t>(i) * out.cols];
      for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
}

template <class Real>
Mat<Real> matmul_tn(const Mat<Real>& a, const Mat<Real>& b) {
  Mat<Real> out(a.cols, b.cols);
  matmul_tn_acc(a, b, out);
  return out;
}

/// Seeded RNG with explicitly specified output mappings so that streams are
/// reproducible independent of the standard library's distribution internals.
/// The engine itself (mt19937_64) has a standardized sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % un);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Derives an independent stream seed (splitmix64 finalizer over seed ^ stream).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

template <class Real>
Mat<Real> random_uniform(int rows, int cols, Real lo, Real hi, Rng& rng) {
  Mat<Real> m(rows, cols);
  for (auto& v : m.data) v = static_cast<Real>(rng.uniform(lo, hi));
  return m;
}

template <class Real>
Mat<Real> random_normal(int rows, int cols, Real mean, Real sigma, Rng& rng) {
  Mat<Real> m(rows, cols);
  for (auto& v : m.data) v = static_cast<Real>(rng.normal(mean, sigma));
  return m;
}

/// Error raised when an operation meets non-finite or otherwise unusable numbers.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace storm
