#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "storm/geometry.hpp"

using namespace storm::geometry;

namespace {

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
}

}  // namespace

TEST_CASE("fibonacci_directions basic contracts") {
  CHECK_THROWS_AS(fibonacci_directions(0), std::invalid_argument);

  const auto one = fibonacci_directions(1);
  REQUIRE(one.size() == 1);
  CHECK(std::abs(one[0].norm() - 1.0) < 1e-9);

  const auto dirs = fibonacci_directions(16);
  REQUIRE(dirs.size() == 16);
  for (const auto& d : dirs) CHECK(std::abs(d.norm() - 1.0) < 1e-9);
}

TEST_CASE("fibonacci_directions minimum pairwise separation matches the brute-force golden value") {
  const auto dirs = fibonacci_directions(16);
  double min_angle = 1e9;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j) min_angle = std::min(min_angle, angle_between(dirs[i], dirs[j]));
  // Brute-force scan over all 120 pairs, frozen at first run.
  CHECK(min_angle == doctest::Approx(0.7920330343039202).epsilon(1e-9));
  CHECK(min_angle >= 0.79);
}

TEST_CASE("fibonacci_directions outputs are pairwise distinct and unit for large n") {
  const auto dirs = fibonacci_directions(4096);
  std::set<std::tuple<double, double, double>> seen;
  for (const auto& d : dirs) {
    CHECK(std::abs(d.norm() - 1.0) < 1e-9);
    seen.insert({d.x, d.y, d.z});
  }
  CHECK(seen.size() == dirs.size());
}

TEST_CASE("fibonacci_directions is bit-identical across calls") {
  const auto a = fibonacci_directions(257);
  const auto b = fibonacci_directions(257);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
    CHECK(a[i].z == b[i].z);
  }
}

TEST_CASE("look_at_rotation aligns forward axis and lands in SO(3)") {
  SUBCASE("identity for +z") {
    const Rot3 r = look_at_rotation({0, 0, 1});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(r.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
  }

  SUBCASE("antipode checked through the postcondition, not a fixed matrix") {
    const Rot3 r = look_at_rotation({0, 0, -1});
    const Vec3 f = r.apply({0, 0, 1});
    CHECK(std::abs(f.x - 0) < 1e-9);
    CHECK(std::abs(f.y - 0) < 1e-9);
    CHECK(std::abs(f.z + 1) < 1e-9);
    CHECK(r.orthogonality_defect() < 1e-9);
    CHECK(std::abs(r.det() - 1.0) < 1e-9);
  }

  SUBCASE("x axis") {
    const Rot3 r = look_at_rotation({1, 0, 0});
    const Vec3 f = r.apply({0, 0, 1});
    CHECK(std::abs(f.x - 1) < 1e-9);
    CHECK(std::abs(f.y) < 1e-9);
    CHECK(std::abs(f.z) < 1e-9);
    CHECK(r.orthogonality_defect() < 1e-9);
  }

  SUBCASE("non-unit input rejected") {
    CHECK_THROWS_AS(look_at_rotation({0, 0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(look_at_rotation({0, 0, 0}), std::invalid_argument);
  }

  SUBCASE("near-pole fallback stays well conditioned") {
    const Rot3 r = look_at_rotation({0, 1, 0});
    CHECK(r.orthogonality_defect() < 1e-9);
    CHECK(std::abs(r.det() - 1.0) < 1e-9);
    const Vec3 f = r.apply({0, 0, 1});
    CHECK(std::abs(f.y - 1) < 1e-9);
  }
}

TEST_CASE("every sampled direction yields a valid rotation") {
  for (int n : {1, 16, 256}) {
    for (const auto& d : fibonacci_directions(n)) {
      const Rot3 r = look_at_rotation(d);
      const Vec3 f = r.apply({0, 0, 1});
      CHECK(std::abs(f.x - d.x) < 1e-9);
      CHECK(std::abs(f.y - d.y) < 1e-9);
      CHECK(std::abs(f.z - d.z) < 1e-9);
      CHECK(r.orthogonality_defect() < 1e-9);
      CHECK(std::abs(r.det() - 1.0) < 1e-9);
    }
  }
}
