#include "storm/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace storm::geometry {

double Vec3::norm() const { return std::sqrt(dot(*this)); }

Vec3 Vec3::normalized() const {
  const double n = norm();
  if (n == 0.0) throw std::invalid_argument("Vec3::normalized: zero vector");
  return {x / n, y / n, z / n};
}

Rot3 Rot3::compose(const Rot3& o) const {
  Rot3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
      r.at(i, j) = s;
    }
  return r;
}

Rot3 Rot3::transposed() const {
  Rot3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
  return r;
}

double Rot3::det() const {
  return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
         at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
         at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

double Rot3::orthogonality_defect() const {
  const Rot3 g = transposed().compose(*this);
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double d = g.at(i, j) - (i == j ? 1.0 : 0.0);
      s += d * d;
    }
  return std::sqrt(s);
}

std::vector<Vec3> fibonacci_directions(int n) {
  if (n < 1) throw std::invalid_argument("fibonacci_directions: n must be >= 1");
  constexpr double kGoldenAngle = 3.141592653589793238462643383279 * (3.0 - 2.2360679774997896964091736687747);  // pi*(3-sqrt(5))
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = kGoldenAngle * static_cast<double>(i);
    out.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return out;
}

Rot3 look_at_rotation(const Vec3& d) {
  if (std::abs(d.norm() - 1.0) > 1e-9) throw std::invalid_argument("look_at_rotation: direction must be unit length");
  Vec3 up{0, 1, 0};
  if (std::abs(d.y) > 1.0 - 1e-6) up = {1, 0, 0};
  const Vec3 right = up.cross(d).normalized();
  const Vec3 true_up = d.cross(right);
  // Columns are (right, true_up, forward) so that R*e3 = d.
  Rot3 r;
  r.at(0, 0) = right.x;
  r.at(1, 0) = right.y;
  r.at(2, 0) = right.z;
  r.at(0, 1) = true_up.x;
  r.at(1, 1) = true_up.y;
  r.at(2, 1) = true_up.z;
  r.at(0, 2) = d.x;
  r.at(1, 2) = d.y;
  r.at(2, 2) = d.z;
  return r;
}

}  // namespace storm::geometry
