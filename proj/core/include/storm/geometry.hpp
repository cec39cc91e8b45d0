#pragma once

#include <array>
#include <vector>

namespace storm::geometry {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
  Vec3 cross(const Vec3& o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
  Vec3 normalized() const;
  Vec3 operator-() const { return {-x, -y, -z}; }
};

/// 3x3 rotation matrix, row-major.
struct Rot3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double at(int r, int c) const { return m[static_cast<std::size_t>(r) * 3 + c]; }
  double& at(int r, int c) { return m[static_cast<std::size_t>(r) * 3 + c]; }

  Vec3 apply(const Vec3& v) const {
    return {at(0, 0) * v.x + at(0, 1) * v.y + at(0, 2) * v.z,
            at(1, 0) * v.x + at(1, 1) * v.y + at(1, 2) * v.z,
            at(2, 0) * v.x + at(2, 1) * v.y + at(2, 2) * v.z};
  }

  Rot3 compose(const Rot3& o) const;  // this * o
  Rot3 transposed() const;
  double det() const;

  /// Frobenius norm of R^T R - I.
  double orthogonality_defect() const;
};

/// n near-uniform directions on the unit sphere via the golden-angle spiral
/// lattice: z_i = 1 - (2i+1)/n, azimuth_i = i * pi * (3 - sqrt(5)).
/// Deterministic; throws std::invalid_argument for n < 1.
std::vector<Vec3> fibonacci_directions(int n);

/// Rotation aligning the camera forward axis (0,0,1) with direction d, i.e.
/// R * e3 = d. Up vector is world +Y, falling back to +X when d is within
/// 1e-6 of +-Y. Throws std::invalid_argument if d is not unit length (1e-9).
Rot3 look_at_rotation(const Vec3& d);

}  // namespace storm::geometry
