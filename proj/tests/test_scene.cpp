#include <doctest.h>

#include <cmath>

#include "pivotkit/rng.hpp"
#include "pivotkit/scene.hpp"

using namespace pk;
using namespace pk::scene;

namespace {

SceneConfig default_scene() {
  SceneConfig s;
  s.wall_present = true;
  s.wall_y = 0.30;
  s.wall_height = 0.30;
  s.table_z = 0.0;
  return s;
}

}  // namespace

TEST_CASE("box_corners identity rotation") {
  const auto c = box_corners(PlanarPose(0, 0, 0), {0.08, 0.04});
  CHECK(c[0].isApprox(Eigen::Vector2d(0.08, 0.04), 1e-12));
  CHECK(c[1].isApprox(Eigen::Vector2d(-0.08, 0.04), 1e-12));
  CHECK(c[2].isApprox(Eigen::Vector2d(-0.08, -0.04), 1e-12));
  CHECK(c[3].isApprox(Eigen::Vector2d(0.08, -0.04), 1e-12));
}

TEST_CASE("box_corners quarter turn") {
  const auto c = box_corners(PlanarPose(0, 0, M_PI / 2), {0.08, 0.04});
  CHECK(c[0].isApprox(Eigen::Vector2d(-0.04, 0.08), 1e-12));
  CHECK(c[1].isApprox(Eigen::Vector2d(-0.04, -0.08), 1e-12));
  CHECK(c[2].isApprox(Eigen::Vector2d(0.04, -0.08), 1e-12));
  CHECK(c[3].isApprox(Eigen::Vector2d(0.04, 0.08), 1e-12));
}

TEST_CASE("box_corners general pose matches rotation matrix") {
  const PlanarPose pose(0.1, 0.05, 0.3);
  const BoxGeometry g{0.08, 0.04};
  const auto c = box_corners(pose, g);
  Eigen::Matrix2d R;
  R << std::cos(0.3), -std::sin(0.3), std::sin(0.3), std::cos(0.3);
  const Eigen::Vector2d local[4] = {{0.08, 0.04}, {-0.08, 0.04}, {-0.08, -0.04}, {0.08, -0.04}};
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d expect = Eigen::Vector2d(0.1, 0.05) + R * local[i];
    CHECK((c[i] - expect).norm() < 1e-12);
  }
}

TEST_CASE("box_corners: 2pi rotation returns identical points") {
  const BoxGeometry g{0.07, 0.03};
  const auto a = box_corners(PlanarPose(0.2, 0.1, 0.5), g);
  const auto b = box_corners(PlanarPose(0.2, 0.1, 0.5 + 2 * M_PI), g);
  for (int i = 0; i < 4; ++i) CHECK((a[i] - b[i]).norm() < 1e-12);
}

TEST_CASE("box_corners rigidity: pairwise distances pose-invariant") {
  Rng rng(7);
  const BoxGeometry g{0.08, 0.04};
  const auto ref = box_corners(PlanarPose(0, 0, 0), g);
  for (int trial = 0; trial < 200; ++trial) {
    const PlanarPose p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-10, 10));
    const auto c = box_corners(p, g);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        CHECK(std::abs((c[i] - c[j]).norm() - (ref[i] - ref[j]).norm()) < 1e-12);
  }
}

TEST_CASE("signed_distance table and wall") {
  const SceneConfig s = default_scene();
  CHECK(signed_distance({0.0, 0.05}, Surface::table, s) == doctest::Approx(0.05));
  CHECK(signed_distance({0.0, 0.0}, Surface::table, s) == doctest::Approx(0.0));
  CHECK(signed_distance({s.wall_y - 0.01, 0.02}, Surface::wall, s) == doctest::Approx(0.01));

  SceneConfig no_wall = s;
  no_wall.wall_present = false;
  no_wall.virtual_wall_height = 0.0;
  CHECK_THROWS_AS(signed_distance({0.0, 0.0}, Surface::wall, no_wall), ConfigError);
}

TEST_CASE("detect_contacts resting box") {
  const SceneConfig s = default_scene();
  const BoxGeometry g{0.08, 0.04};
  const auto r = detect_contacts(PlanarPose(0.0, 0.04, 0.0), g, s, 1e-4);
  CHECK(r.contacts.size() == 2);
  for (const auto& c : r.contacts) {
    CHECK(c.owner.kind == ContactOwner::Kind::corner_surface);
    CHECK(c.owner.other == static_cast<int>(Surface::table));
    CHECK(std::abs(c.normal.norm() - 1.0) < 1e-9);
  }
  // bottom face (3) touching table (surface 0) with 2 surfaces in the scene;
  // side faces share the touching corners and flag too, the top face does not.
  CHECK(r.signal.flags[3 * 2 + 0] == 1);
  CHECK(r.signal.flags[1 * 2 + 0] == 0);
  CHECK(r.signal.flags[3 * 2 + 1] == 0);
}

TEST_CASE("detect_contacts tilted box has one table contact") {
  const SceneConfig s = default_scene();
  const BoxGeometry g{0.08, 0.04};
  // Tilt 45 deg and place exactly one corner on the table: lowest corner
  // offset below center is half_len*sin + half_wid*cos.
  const double th = M_PI / 4;
  const double drop = g.half_len * std::sin(th) + g.half_wid * std::cos(th);
  const auto r = detect_contacts(PlanarPose(0.0, drop, th), g, s, 1e-6);
  int table_contacts = 0;
  for (const auto& c : r.contacts)
    if (c.owner.other == static_cast<int>(Surface::table)) ++table_contacts;
  CHECK(table_contacts == 1);
}

TEST_CASE("detect_contacts wall flag") {
  const SceneConfig s = default_scene();
  const BoxGeometry g{0.08, 0.04};
  // Box resting on table with +y face flush against the wall.
  const auto r = detect_contacts(PlanarPose(s.wall_y - g.half_len, g.half_wid, 0.0), g, s, 1e-6);
  bool wall_contact = false;
  for (const auto& c : r.contacts)
    if (c.owner.other == static_cast<int>(Surface::wall)) wall_contact = true;
  CHECK(wall_contact);
  CHECK(r.signal.flags[0 * 2 + 1] == 1);  // +y face x wall
}

TEST_CASE("detect_contacts floating box with tol 0 is empty") {
  const SceneConfig s = default_scene();
  const BoxGeometry g{0.08, 0.04};
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const PlanarPose p(rng.uniform(0.0, 0.1), rng.uniform(0.15, 0.25), rng.uniform(-3, 3));
    const auto r = detect_contacts(p, g, s, 0.0);
    CHECK(r.contacts.empty());
  }
}

TEST_CASE("in_friction_cone examples") {
  const auto a = in_friction_cone({1.0, 0.0}, 0.5);
  CHECK(a.inside);
  CHECK(a.margin == doctest::Approx(0.5));
  const auto b = in_friction_cone({1.0, 1.0}, 0.5);
  CHECK(!b.inside);
  CHECK(b.margin == doctest::Approx(-0.5));
  const auto c = in_friction_cone({0.0, 0.0}, 0.3);
  CHECK(c.inside);
  CHECK(c.margin == doctest::Approx(0.0));
}

TEST_CASE("in_friction_cone flag equals margin sign") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    ContactForce f{rng.uniform(0, 2), rng.uniform(-2, 2)};
    const double mu = rng.uniform(0, 1.5);
    const auto r = in_friction_cone(f, mu);
    CHECK(r.inside == (r.margin >= 0.0));
  }
}

TEST_CASE("orientation_error examples") {
  CHECK(orientation_error(0.7, 0.7) == doctest::Approx(0.0));
  CHECK(orientation_error(0.0, M_PI / 2) == doctest::Approx(M_PI / 2));
  CHECK(orientation_error(-3.0, 3.0) == doctest::Approx(2 * M_PI - 6.0));
}

TEST_CASE("orientation_error equals embedded trace formula") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10);
    // 3D embedding: R_rel = Rz(a - b); trace = 2 cos(a-b) + 1.
    const double trace = 2.0 * std::cos(a - b) + 1.0;
    const double via_trace = std::acos(std::clamp(0.5 * (trace - 1.0), -1.0, 1.0));
    CHECK(orientation_error(a, b) == doctest::Approx(via_trace).epsilon(1e-9));
  }
}

TEST_CASE("orientation_error metric properties") {
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-7, 7), b = rng.uniform(-7, 7), c = rng.uniform(-7, 7);
    const double ab = orientation_error(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= M_PI + 1e-12);
    CHECK(ab == doctest::Approx(orientation_error(b, a)));
    CHECK(orientation_error(a, c) <= ab + orientation_error(b, c) + 1e-12);
  }
  CHECK(orientation_error(1.0, 1.0 + 4 * M_PI) == doctest::Approx(0.0));
}

TEST_CASE("PlanarPose wraps theta on construction") {
  CHECK(PlanarPose(0, 0, 3 * M_PI).theta == doctest::Approx(M_PI));
  CHECK(PlanarPose(0, 0, -M_PI).theta == doctest::Approx(M_PI));
  CHECK(PlanarPose(0, 0, 2 * M_PI).theta == doctest::Approx(0.0));
}
