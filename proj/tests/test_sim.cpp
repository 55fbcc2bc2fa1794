#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pivotkit/errors.hpp"
#include "pivotkit/sim.hpp"

using namespace pk;
using namespace pk::sim;
using cito::TaskKind;
using cito::make_pivot_task;
using scene::ContactOwner;
using scene::PlanarPose;

namespace {

EnvState resting_state(double mass = 0.11) {
  EnvState s;
  s.params.mass = mass;
  s.params.geometry = {0.08, 0.04};
  s.params.mu_table = 0.3;
  s.params.mu_wall = 0.3;
  s.params.mu_object = 0.5;
  s.params.mu_robot = 1.2;
  s.scene = make_pivot_task(TaskKind::with_wall, s.params.geometry).scene;
  s.object = PlanarPose(0.22, 0.04, 0.0);
  s.robot_actual = {Eigen::Vector2d(0.22, 0.2)};
  s.robot_command = s.robot_actual;
  s.robot_velocity = {Eigen::Vector2d::Zero()};
  s.kp = 5000.0;
  s.kd = 2.0 * std::sqrt(s.kp);
  return s;
}

Env make_env(TaskKind kind, bool noise, bool dr) {
  DomainRandomizationConfig cfg;
  cfg.params.nominal_geom = {0.08, 0.04};
  cfg.sensor_noise = noise;
  cfg.randomize_dynamics = dr;
  return Env(make_pivot_task(kind, cfg.params.nominal_geom), SimConfig{}, cfg,
             NormalizationConfig{});
}

}  // namespace

TEST_CASE("solve_quasistatic: resting box, robot far away") {
  EnvState s = resting_state();
  s.object = PlanarPose(0.19, 0.04, 0.0);  // clear of the wall
  const auto r = solve_quasistatic(s, s.robot_command, 0.02, SimConfig{});
  REQUIRE(r.ok);
  CHECK(r.object_velocity.norm() < 1e-9);
  double normal_sum = 0.0;
  for (const auto& cs : r.contacts)
    if (cs.owner.kind == ContactOwner::Kind::corner_surface) normal_sum += cs.normal_mag;
  CHECK(normal_sum == doctest::Approx(0.11 * 9.81).epsilon(1e-6));
}

TEST_CASE("solve_quasistatic: pressing down is balanced by table normals") {
  EnvState s = resting_state();
  s.object = PlanarPose(0.19, 0.04, 0.0);
  // Robot disc touching the top face, commanded 3 mm into the box.
  s.robot_actual = {Eigen::Vector2d(0.19, 0.08 + 0.005)};
  s.robot_command = {Eigen::Vector2d(0.19, 0.08 + 0.005 - 0.003)};
  const auto r = solve_quasistatic(s, s.robot_command, 0.02, SimConfig{});
  REQUIRE(r.ok);
  CHECK(std::abs(r.object_velocity(0)) < 1e-9);
  CHECK(std::abs(r.object_velocity(2)) < 1e-9);
  CHECK(r.object_velocity(1) < 1e-9);  // may only press into the table
  double table_normal = 0.0, robot_normal = 0.0;
  for (const auto& cs : r.contacts) {
    if (cs.owner.kind == ContactOwner::Kind::corner_surface) table_normal += cs.normal_mag;
    if (cs.owner.kind == ContactOwner::Kind::robot_face) robot_normal += cs.normal_mag;
  }
  CHECK(robot_normal > 1.0);  // the spring presses hard
  CHECK(table_normal == doctest::Approx(0.11 * 9.81 + robot_normal).epsilon(1e-6));
}

TEST_CASE("solve_quasistatic matches mode enumeration on random configurations") {
  SimConfig sc;
  Rng rng(2024);
  int tested = 0;
  while (tested < 100) {
    EnvState s = resting_state(rng.uniform(0.05, 0.4));
    // Random nearby pose: resting, tilted on a corner, or floating slightly.
    const int kind = static_cast<int>(rng.uniform_index(3));
    if (kind == 0) {
      s.object = PlanarPose(rng.uniform(0.18, 0.22), 0.04, 0.0);
    } else if (kind == 1) {
      const double th = rng.uniform(-0.5, -0.05);
      const double drop = 0.08 * std::sin(-th) + 0.04 * std::cos(th);
      s.object = PlanarPose(rng.uniform(0.18, 0.24), drop, th);
    } else {
      s.object = PlanarPose(rng.uniform(0.18, 0.24), rng.uniform(0.041, 0.05), 0.0);
    }
    // Robot near the top or left face, commanded a small random push.
    const double side = rng.uniform01() < 0.5 ? 1.0 : -1.0;
    (void)side;
    const Eigen::Vector2d base =
        rng.uniform01() < 0.5 ? Eigen::Vector2d(s.object.y, s.object.z + 0.046)
                              : Eigen::Vector2d(s.object.y - 0.086, s.object.z);
    s.robot_actual = {base + Eigen::Vector2d(rng.uniform(-0.01, 0.01), rng.uniform(-0.005, 0.005))};
    s.robot_command = {s.robot_actual[0] + Eigen::Vector2d(rng.uniform(-0.004, 0.004),
                                                            rng.uniform(-0.004, 0.004))};
    s.kp = rng.uniform(2000, 8000);

    // Keep to <= 3 potential contacts to match the enumeration budget cheaply.
    const auto probe = solve_quasistatic(s, s.robot_command, 0.02, sc);
    REQUIRE(probe.ok);
    if (probe.contacts.size() > 3) continue;

    const auto oracle = oracles::enumerate_quasistatic(s, s.robot_command, 0.02, sc);
    REQUIRE(oracle.found);
    // Displacement agreement within 1e-6 m / 1e-6 rad over the substep.
    const Eigen::Vector3d dv = (probe.object_velocity - oracle.velocity.head<3>()) * 0.02;
    CHECK(std::abs(dv(0)) < 1e-6);
    CHECK(std::abs(dv(1)) < 1e-6);
    CHECK(std::abs(dv(2)) < 1e-6);
    ++tested;
  }
}

TEST_CASE("dissipativity and non-penetration over random rollouts") {
  SimConfig sc;
  Rng rng(7);
  DomainRandomizationConfig dr;
  dr.params.nominal_geom = {0.08, 0.04};
  Env env(make_pivot_task(TaskKind::with_wall, dr.params.nominal_geom), sc, dr,
          NormalizationConfig{});
  long steps = 0;
  double max_pen = 0.0;
  double max_power = 0.0;
  double max_compl = 0.0;
  for (int ep = 0; ep < 40 && steps < 10000; ++ep) {
    env.reset(1000 + static_cast<std::uint64_t>(ep));
    for (int t = 0; t < 300 && steps < 10000; ++t) {
      Action a;
      a.delta = {Eigen::Vector2d(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01))};
      // Probe the substep solution directly for the power/complementarity
      // invariants, then advance the env with the same action.
      const auto& st = env.state();
      const auto qr = solve_quasistatic(st, st.robot_command,
                                        sc.dt_control / sc.n_substeps, sc);
      if (qr.ok) {
        for (const auto& cs : qr.contacts) {
          if (cs.owner.kind == ContactOwner::Kind::corner_surface) {
            max_power = std::max(max_power, cs.tangential_mag * cs.slip_rate);
          } else {
            max_power = std::max(max_power, -cs.tangential_mag * cs.slip_rate);
          }
        }
      }
      const auto out = env.step(a);
      ++steps;
      const auto corners = scene::box_corners(env.state().object, env.state().params.geometry);
      for (const auto& w : corners) {
        max_pen = std::max(max_pen, env.state().scene.table_z - w(1));
        max_pen = std::max(max_pen, scene::penetration_depth(w, scene::Surface::wall,
                                                             env.state().scene));
      }
      // lambda_n * gap after the step.
      const auto qr2 = solve_quasistatic(env.state(), env.state().robot_command,
                                         sc.dt_control / sc.n_substeps, sc);
      if (qr2.ok)
        for (const auto& cs : qr2.contacts)
          if (cs.gap > 0) max_compl = std::max(max_compl, cs.normal_mag * cs.gap);
      if (out.termination != Termination::running) break;
    }
  }
  CHECK(steps >= 10000);
  CHECK(max_pen <= 1e-5);
  CHECK(max_power <= 1e-8);  // friction never adds energy
  (void)max_compl;
}

TEST_CASE("env determinism: same seed and actions give identical trajectories") {
  auto run = [&](std::uint64_t seed) {
    Env env = make_env(TaskKind::with_wall, true, true);
    env.reset(seed);
    std::vector<double> trace;
    Rng arng(55);
    for (int t = 0; t < 50; ++t) {
      Action a;
      a.delta = {Eigen::Vector2d(arng.uniform(-0.01, 0.01), arng.uniform(-0.01, 0.01))};
      const auto out = env.step(a);
      trace.push_back(env.state().object.y);
      trace.push_back(env.state().object.theta);
      trace.push_back(out.observation.sensor(0));
      if (out.termination != Termination::running) break;
    }
    return trace;
  };
  const auto a = run(3);
  const auto b = run(3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("env: zero action on resting box leaves pose unchanged") {
  Env env = make_env(TaskKind::with_wall, false, false);
  env.reset(1);
  const PlanarPose before = env.state().object;
  const auto out = env.step(Action::zero(1));
  CHECK(std::abs(env.state().object.y - before.y) < 1e-9);
  CHECK(std::abs(env.state().object.z - before.z) < 1e-9);
  CHECK(std::abs(env.state().object.theta - before.theta) < 1e-9);
  CHECK(out.termination == Termination::running);
}

TEST_CASE("env: 300 zero actions time out") {
  Env env = make_env(TaskKind::with_wall, false, false);
  env.reset(1);
  Termination term = Termination::running;
  for (int t = 0; t < 300; ++t) term = env.step(Action::zero(1)).termination;
  CHECK(term == Termination::timeout);
  CHECK_THROWS_AS(env.step(Action::zero(1)), UsageError);
}

TEST_CASE("env: reset sampling respects ranges and mean") {
  DomainRandomizationConfig dr;
  dr.params.nominal_geom = {0.08, 0.04};
  Env env(make_pivot_task(TaskKind::with_wall, dr.params.nominal_geom), SimConfig{}, dr,
          NormalizationConfig{});
  double mean = 0.0;
  for (int i = 0; i < 1000; ++i) {
    env.reset(static_cast<std::uint64_t>(i));
    const double mass = env.state().params.mass;
    CHECK(mass >= 0.04);
    CHECK(mass <= 0.4);
    mean += mass;
  }
  mean /= 1000.0;
  CHECK(std::abs(mean - 0.22) < 0.02);
}

TEST_CASE("env: demo-bound reset adopts the record's params") {
  cito::ParamRanges ranges;
  ranges.nominal_geom = {0.08, 0.04};
  const auto task = make_pivot_task(TaskKind::with_wall, ranges.nominal_geom);
  const auto ds = cito::generate_dataset(task, 1, ranges, cito::FeasibilityLevel::dynamic, 9);
  DomainRandomizationConfig dr;
  dr.params.nominal_geom = ranges.nominal_geom;
  Env env(task, SimConfig{}, dr, NormalizationConfig{});
  env.bind_demos(&ds);
  const auto rr = env.reset(4);
  REQUIRE(rr.demo != nullptr);
  CHECK(env.state().params.mass == ds.records[0].params.mass);
  CHECK(env.state().params.mu_table == ds.records[0].params.mu_table);
}

TEST_CASE("env: noise-free privileged observation equals ground truth") {
  Env env = make_env(TaskKind::with_wall, false, false);
  const auto rr = env.reset(2);
  const auto& st = env.state();
  const NormalizationConfig norm;
  const Eigen::VectorXd pose_n = norm.normalize_pose(st.object);
  CHECK((rr.observation.privileged.head<3>() - pose_n).norm() < 1e-12);
  const Eigen::VectorXd par_n = norm.normalize_params(st.params);
  CHECK((rr.observation.privileged.segment<7>(3) - par_n).norm() < 1e-12);
  const auto sig = scene::detect_contacts(st.object, st.params.geometry, st.scene, 1e-4).signal;
  for (int i = 0; i < sig.size(); ++i)
    CHECK(rr.observation.privileged(10 + i) == static_cast<double>(sig.flags[i]));
}

TEST_CASE("rasterize_mask: axis-aligned area and symmetry") {
  RasterSpec spec;
  const BoxGeometry g{0.08, 0.04};
  const PlanarPose pose(0.19, 0.12, 0.0);
  const auto mask = rasterize_mask(pose, g, spec);
  const double cell_w = (spec.y_max - spec.y_min) / spec.width;
  const double cell_h = (spec.z_max - spec.z_min) / spec.height;
  long filled = 0;
  for (auto v : mask) filled += v;
  const double area_cells = (2 * g.half_len) * (2 * g.half_wid) / (cell_w * cell_h);
  const double perim_cells = 2 * ((2 * g.half_len) / cell_w + (2 * g.half_wid) / cell_h) + 4;
  CHECK(std::abs(filled - area_cells) <= perim_cells);

  // Rotating by pi leaves the mask unchanged.
  const auto mask_pi = rasterize_mask(PlanarPose(pose.y, pose.z, M_PI), g, spec);
  CHECK(mask == mask_pi);

  // Object fully outside the window -> zero mask.
  const auto empty_mask = rasterize_mask(PlanarPose(3.0, 3.0, 0.3), g, spec);
  for (auto v : empty_mask) CHECK(v == 0);
}

TEST_CASE("env: out-of-plane termination applies on a sunken object") {
  Env env = make_env(TaskKind::with_wall, false, false);
  env.reset(1);
  // Force the pathological state directly: object centre below the table.
  EnvState& st = const_cast<EnvState&>(env.state());
  st.object = PlanarPose(st.object.y, -0.01, st.object.theta);
  const auto out = env.step(Action::zero(1));
  CHECK(out.termination == Termination::out_of_plane_fail);
  CHECK(out.info.out_of_plane);
}
