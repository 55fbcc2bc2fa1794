#include <doctest.h>

#include <cmath>

#include "pivotkit/cito.hpp"
#include "pivotkit/errors.hpp"

using namespace pk;
using namespace pk::cito;
using pk::scene::PlanarPose;
using pk::scene::Surface;

namespace {

PhysicalParams default_params() {
  PhysicalParams p;
  p.mass = 0.11;
  p.geometry = {0.08, 0.04};
  p.mu_table = 0.30;
  p.mu_wall = 0.30;
  p.mu_object = 0.5;
  p.mu_robot = 1.2;
  return p;
}

// Geometric oracle for the with-wall pivot: at tilt phi the box touches the
// wall with its top-right corner and the table with its bottom-right corner,
// giving pose y = wall_y - (l cos + w sin), z = l sin + w cos, theta = -phi.
PlanarPose wall_arc_pose(double phi, const BoxGeometry& g, double wall_y) {
  return {wall_y - (g.half_len * std::cos(phi) + g.half_wid * std::sin(phi)),
          g.half_len * std::sin(phi) + g.half_wid * std::cos(phi), -phi};
}

// Geometric oracle for the without-wall pivot: rotation about the bottom-right
// corner pinned at the lip (junction).
PlanarPose pinned_arc_pose(double phi, const BoxGeometry& g, double pivot_y) {
  const double c = std::cos(-phi), s = std::sin(-phi);
  // center = pivot + R(-phi) * (-l, +w)
  return {pivot_y + c * (-g.half_len) - s * g.half_wid,
          s * (-g.half_len) + c * g.half_wid, -phi};
}

}  // namespace

TEST_CASE("stage1: start == goal gives a constant trajectory") {
  auto params = default_params();
  TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry, 10);
  task.goal_pose = task.start_pose;
  const auto r = stage1_kinematic(task, params);
  REQUIRE(r.ok());
  for (const auto& q : r.value->object_traj) {
    CHECK(std::abs(q.y - task.start_pose.y) < 1e-9);
    CHECK(std::abs(q.z - task.start_pose.z) < 1e-9);
    CHECK(std::abs(q.theta) < 1e-9);
  }
}

TEST_CASE("stage1: goal below the table is infeasible") {
  auto params = default_params();
  TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry, 10);
  task.goal_pose = PlanarPose(task.goal_pose.y, -0.05, task.goal_pose.theta);
  const auto r = stage1_kinematic(task, params);
  CHECK(!r.ok());
}

TEST_CASE("stage1 with-wall pivot follows the two-contact sliding arc") {
  auto params = default_params();
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto r = stage1_kinematic(task, params);
  REQUIRE(r.ok());
  const auto& traj = r.value->object_traj;
  REQUIRE(static_cast<int>(traj.size()) == task.horizon + 1);
  // Non-penetration everywhere.
  for (const auto& q : traj) {
    const auto corners = scene::box_corners(q, params.geometry);
    for (const auto& w : corners) {
      CHECK(w(1) > -1e-6);
      CHECK(scene::penetration_depth(w, Surface::wall, task.scene) < 1e-6);
    }
  }
  // Against the arc oracle: at the trajectory's own tilt angle, position
  // matches the two-contact arc pose (skip the early free segment where the
  // box may still track the reference without binding constraints).
  for (int t = 5; t < task.horizon - 2; ++t) {
    const double phi = -traj[t].theta;
    if (phi < 0.05 || phi > M_PI / 2 - 0.05) continue;
    const PlanarPose arc = wall_arc_pose(phi, params.geometry, task.scene.wall_y);
    CHECK(std::abs(traj[t].y - arc.y) < 1e-3);
    CHECK(std::abs(traj[t].z - arc.z) < 1e-3);
  }
  CHECK(scene::orientation_error(traj.back().theta, task.goal_pose.theta) < 1e-6);
}

TEST_CASE("stage1 without-wall pivot keeps the pivot corner at the junction") {
  auto params = default_params();
  const TaskSpec task = make_pivot_task(TaskKind::without_wall, params.geometry, 80);
  const auto r = stage1_kinematic(task, params);
  REQUIRE(r.ok());
  const auto& traj = r.value->object_traj;
  for (int t = 0; t <= task.horizon; ++t) {
    const auto corners = scene::box_corners(traj[t], params.geometry);
    // corner 3 (bottom-right) stays within 1e-3 of the table-lip junction.
    const Eigen::Vector2d junction(task.scene.wall_y, task.scene.table_z);
    CHECK((corners[3] - junction).norm() < 1e-3);
    // Matches the pinned arc oracle.
    const PlanarPose arc = pinned_arc_pose(-traj[t].theta, params.geometry, task.scene.wall_y);
    CHECK(std::abs(traj[t].y - arc.y) < 2e-3);
    CHECK(std::abs(traj[t].z - arc.z) < 2e-3);
  }
}

TEST_CASE("stage2 static task: zero robot force, extrinsic normals sum to mg") {
  auto params = default_params();
  TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry, 6);
  task.goal_pose = task.start_pose;
  const auto s1 = stage1_kinematic(task, params);
  REQUIRE(s1.ok());
  const auto s2 = stage2_contact_milp(task, params, *s1.value);
  REQUIRE(s2.ok());
  const double mg = params.mass * task.scene.gravity;
  for (int t = 0; t <= task.horizon; ++t) {
    for (int r = 0; r < task.n_robots; ++r)
      CHECK(s2.value->robot_contacts[r][t].force.magnitude() < 1e-7);
    double normal_sum = 0.0;
    for (std::size_t e = 0; e < s2.value->extrinsic_forces.size(); ++e) {
      // Only table candidates carry weight in the static rest pose.
      if (static_cast<int>(e) % 2 == 0) normal_sum += s2.value->extrinsic_forces[e][t].normal_mag;
    }
    CHECK(normal_sum == doctest::Approx(mg).epsilon(1e-6));
  }
}

TEST_CASE("stage2 pivot with high friction verified by the residual evaluator") {
  auto params = default_params();
  params.mu_table = 0.6;
  params.mu_wall = 0.6;
  params.mu_object = 0.7;
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto s1 = stage1_kinematic(task, params);
  REQUIRE(s1.ok());
  const auto s2 = stage2_contact_milp(task, params, *s1.value);
  REQUIRE(s2.ok());
  const auto s3 = stage3_refine(task, params, *s2.value);
  REQUIRE(s3.ok());
  const auto check = check_demonstration(*s3.value, task);
  CHECK(check.force_residual <= 1e-4);
  CHECK(check.moment_residual <= 1e-4);
  CHECK(check.cone_margin_min >= -1e-6);
  CHECK(check.complementarity <= 1e-6);
}

TEST_CASE("stage2 infeasible for absurd mass") {
  auto params = default_params();
  params.mass = 1e6;
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto s1 = stage1_kinematic(task, params);
  REQUIRE(s1.ok());
  const auto s2 = stage2_contact_milp(task, params, *s1.value);
  CHECK(!s2.ok());
}

TEST_CASE("generate_demo dynamic reaches the goal and passes all invariants") {
  auto params = default_params();
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto demo = generate_demo(task, params, FeasibilityLevel::dynamic);
  REQUIRE_MESSAGE(demo.ok(), demo.diagnostic);
  CHECK(demo.value->feasibility == FeasibilityLevel::dynamic);
  const auto check = check_demonstration(*demo.value, task);
  CHECK(check.dynamic_ok(params.mass * task.scene.gravity));
  CHECK(check.final_orientation_error <= 1e-3);
  // Contact-location consistency and friction cones via the report fields.
  CHECK(check.contact_distance <= 1e-4);
  CHECK(check.cone_margin_min >= -1e-6);
}

TEST_CASE("generate_demo kinematic has no force fields") {
  auto params = default_params();
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto demo = generate_demo(task, params, FeasibilityLevel::kinematic);
  REQUIRE_MESSAGE(demo.ok(), demo.diagnostic);
  CHECK(demo.value->feasibility == FeasibilityLevel::kinematic);
  CHECK(demo.value->robot_forces.empty());
  CHECK(demo.value->extrinsic_forces.empty());
  CHECK(demo.value->robot_traj.size() == 1);
  const auto check = check_demonstration(*demo.value, task);
  CHECK(check.kinematic_ok);
}

TEST_CASE("generate_demo without-wall dynamic works at high friction") {
  auto params = default_params();
  params.mu_table = 0.35;
  params.mu_object = 0.65;
  const TaskSpec task = make_pivot_task(TaskKind::without_wall, params.geometry, 80);
  const auto demo = generate_demo(task, params, FeasibilityLevel::dynamic);
  REQUIRE_MESSAGE(demo.ok(), demo.diagnostic);
  const auto check = check_demonstration(*demo.value, task);
  CHECK(check.dynamic_ok(params.mass * task.scene.gravity));
}

TEST_CASE("generate_dataset determinism and invariant sweep") {
  ParamRanges ranges;
  ranges.nominal_geom = {0.08, 0.04};
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, ranges.nominal_geom);
  const auto a = generate_dataset(task, 3, ranges, FeasibilityLevel::dynamic, 77);
  const auto b = generate_dataset(task, 3, ranges, FeasibilityLevel::dynamic, 77);
  REQUIRE(a.records.size() == 3);
  REQUIRE(b.records.size() == 3);
  CHECK(a.rejection_count == b.rejection_count);
  for (int i = 0; i < 3; ++i) {
    for (int t = 0; t <= a.records[i].horizon(); ++t) {
      CHECK(a.records[i].object_traj[t].y == b.records[i].object_traj[t].y);
      CHECK(a.records[i].object_traj[t].theta == b.records[i].object_traj[t].theta);
    }
    TaskSpec drawn =
        make_pivot_task(task.kind, a.records[i].params.geometry, task.horizon, task.dt);
    const auto check = check_demonstration(a.records[i], drawn);
    CHECK(check.dynamic_ok(a.records[i].params.mass * task.scene.gravity));
  }
}

TEST_CASE("generate_dataset parallel workers match single worker") {
  ParamRanges ranges;
  ranges.nominal_geom = {0.08, 0.04};
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, ranges.nominal_geom);
  DatasetGenOptions one, two;
  one.workers = 1;
  two.workers = 2;
  const auto a = generate_dataset(task, 2, ranges, FeasibilityLevel::dynamic, 5, {}, one);
  const auto b = generate_dataset(task, 2, ranges, FeasibilityLevel::dynamic, 5, {}, two);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].params.mass == b.records[i].params.mass);
    CHECK(a.records[i].object_traj.back().theta == b.records[i].object_traj.back().theta);
  }
}

TEST_CASE("mode dominance: dynamic demo trajectory is kinematically feasible") {
  auto params = default_params();
  const TaskSpec task = make_pivot_task(TaskKind::with_wall, params.geometry);
  const auto demo = generate_demo(task, params, FeasibilityLevel::dynamic);
  REQUIRE(demo.ok());
  const auto check = check_demonstration(*demo.value, task);
  CHECK(check.kinematic_ok);
}
