#include "pivotkit/sim.hpp"

#include <algorithm>
#include <cmath>

#include "pivotkit/errors.hpp"
#include "pivotkit/opt/qp.hpp"

namespace pk::sim {

using namespace pk::scene;

Eigen::VectorXd NormalizationConfig::normalize_pose(const PlanarPose& p) const {
  Eigen::VectorXd v(3);
  v << (p.y - pos_y_offset) / pos_y_scale, (p.z - pos_z_offset) / pos_z_scale,
      p.theta / theta_scale;
  return v;
}

PlanarPose NormalizationConfig::denormalize_pose(const Eigen::VectorXd& v) const {
  return {v(0) * pos_y_scale + pos_y_offset, v(1) * pos_z_scale + pos_z_offset,
          v(2) * theta_scale};
}

Eigen::VectorXd NormalizationConfig::normalize_params(const PhysicalParams& p) const {
  Eigen::VectorXd v(7);
  v << (p.mass - mass_offset) / mass_scale, (p.geometry.half_len - half_len_offset) / half_len_scale,
      (p.geometry.half_wid - half_wid_offset) / half_wid_scale,
      (p.mu_table - mu_env_offset) / mu_env_scale, (p.mu_wall - mu_env_offset) / mu_env_scale,
      (p.mu_object - mu_obj_offset) / mu_obj_scale, (p.mu_robot - mu_robot_offset) / mu_robot_scale;
  return v;
}

PhysicalParams NormalizationConfig::denormalize_params(const Eigen::VectorXd& v) const {
  PhysicalParams p;
  p.mass = v(0) * mass_scale + mass_offset;
  p.geometry.half_len = v(1) * half_len_scale + half_len_offset;
  p.geometry.half_wid = v(2) * half_wid_scale + half_wid_offset;
  p.mu_table = v(3) * mu_env_scale + mu_env_offset;
  p.mu_wall = v(4) * mu_env_scale + mu_env_offset;
  p.mu_object = v(5) * mu_obj_scale + mu_obj_offset;
  p.mu_robot = v(6) * mu_robot_scale + mu_robot_offset;
  return p;
}

Eigen::VectorXd Observation::concat() const {
  Eigen::VectorXd v(privileged.size() + sensor.size());
  v << privileged, sensor;
  return v;
}

Eigen::VectorXd Action::flat() const {
  Eigen::VectorXd v(2 * static_cast<int>(delta.size()));
  for (std::size_t r = 0; r < delta.size(); ++r) v.segment<2>(2 * static_cast<int>(r)) = delta[r];
  return v;
}

Action Action::from_flat(const Eigen::VectorXd& v) {
  Action a;
  for (int r = 0; r < v.size() / 2; ++r) a.delta.push_back(v.segment<2>(2 * r));
  return a;
}

// ---------------------------------------------------------------------------
// Quasistatic contact solve
// ---------------------------------------------------------------------------

namespace {

struct ContactRow {
  ContactOwner owner;
  Eigen::Vector2d point;
  Eigen::Vector2d nu;   // into the object
  Eigen::Vector2d tan;  // (nu.z, -nu.y)
  double gap = 0.0;
  double mu = 0.0;
  int robot = -1;  // >= 0 for robot contacts
};

// Moves a disc centre out of the (inflated) box if it lies inside.
Eigen::Vector2d push_disc_out(const Eigen::Vector2d& center, const PlanarPose& pose,
                              const BoxGeometry& g, double radius) {
  const double cth = std::cos(pose.theta), sth = std::sin(pose.theta);
  const double dy = center(0) - pose.y, dz = center(1) - pose.z;
  const double ly = cth * dy + sth * dz, lz = -sth * dy + cth * dz;
  if (std::abs(ly) >= g.half_len + radius || std::abs(lz) >= g.half_wid + radius) return center;
  const double push_y = g.half_len + radius - std::abs(ly);
  const double push_z = g.half_wid + radius - std::abs(lz);
  double nly = ly, nlz = lz;
  if (push_z <= push_y)
    nlz = (lz >= 0 ? 1.0 : -1.0) * (g.half_wid + radius);
  else
    nly = (ly >= 0 ? 1.0 : -1.0) * (g.half_len + radius);
  return {pose.y + cth * nly - sth * nlz, pose.z + sth * nly + cth * nlz};
}

// Candidate contacts: corner-surface pairs within the margin plus the robot
// disc against the nearest box faces.
std::vector<ContactRow> gather_contacts(const EnvState& s, const SimConfig& sc) {
  std::vector<ContactRow> rows;
  const auto corners = box_corners(s.object, s.params.geometry);
  const int n_surf = surface_count(s.scene);
  for (int k = 0; k < 4; ++k) {
    const double d_table = corners[k](1) - s.scene.table_z;
    if (d_table <= sc.contact_margin) {
      ContactRow r;
      r.owner = {ContactOwner::Kind::corner_surface, k, static_cast<int>(Surface::table)};
      r.point = corners[k];
      r.nu = surface_normal(Surface::table, s.scene);
      r.tan = surface_tangent(Surface::table, s.scene);
      r.gap = d_table;
      r.mu = s.params.mu_pair_table();
      rows.push_back(r);
    }
    if (n_surf > 1 && !(s.lip_broken && !s.scene.wall_present) &&
        wall_band_contains(corners[k], s.scene, sc.contact_margin)) {
      const double d_wall = signed_distance(corners[k], Surface::wall, s.scene);
      if (d_wall <= sc.contact_margin) {
        ContactRow r;
        r.owner = {ContactOwner::Kind::corner_surface, k, static_cast<int>(Surface::wall)};
        r.point = corners[k];
        r.nu = surface_normal(Surface::wall, s.scene);
        r.tan = surface_tangent(Surface::wall, s.scene);
        r.gap = d_wall;
        r.mu = s.params.mu_pair_wall();
        rows.push_back(r);
      }
    }
  }
  for (std::size_t rb = 0; rb < s.robot_actual.size(); ++rb) {
    for (int f = 0; f < 4; ++f) {
      const auto [a, b] = cito::face_segment_world(s.object, s.params.geometry, f);
      const Eigen::Vector2d d = b - a;
      const double t = std::clamp(d.dot(s.robot_actual[rb] - a) / d.squaredNorm(), 0.0, 1.0);
      const Eigen::Vector2d p = a + t * d;
      const Eigen::Vector2d nu_in = cito::face_inward_normal_world(s.object, f);
      const double gap = (s.robot_actual[rb] - p).dot(-nu_in) - sc.robot_radius;
      // Behind-face guard: skip when the robot center projects inside.
      if (gap <= sc.contact_margin && (s.robot_actual[rb] - p).dot(-nu_in) > -sc.robot_radius) {
        ContactRow r;
        r.owner = {ContactOwner::Kind::robot_face, static_cast<int>(rb), f};
        r.point = p;
        r.nu = nu_in;
        r.tan = {nu_in(1), -nu_in(0)};
        r.gap = gap;
        r.mu = s.params.mu_pair_robot();
        r.robot = static_cast<int>(rb);
        rows.push_back(r);
      }
    }
  }
  return rows;
}

}  // namespace

namespace {
QuasistaticResult solve_quasistatic_once(const EnvState& s,
                                         const std::vector<Eigen::Vector2d>& cmd_eff, double h,
                                         const SimConfig& sc, const SlipMemory& slip) {
  QuasistaticResult res;
  const int n_rob = static_cast<int>(s.robot_actual.size());
  const int nv = 3 + 2 * n_rob;
  const double m = s.params.mass;
  const double l = s.params.geometry.half_len, w = s.params.geometry.half_wid;
  const double inertia = m * (l * l + w * w) / 3.0;
  // Implicit spring and damper keep the robot stable at high kp.
  const double m_rob = sc.robot_virtual_mass + h * s.kd + h * h * s.kp;

  opt::QuadraticProgram qp;
  qp.hessian = Eigen::MatrixXd::Zero(nv, nv);
  qp.hessian(0, 0) = m + h * sc.lin_damping;
  qp.hessian(1, 1) = m + h * sc.lin_damping;
  qp.hessian(2, 2) = inertia + h * sc.rot_damping;
  for (int r = 0; r < n_rob; ++r) {
    qp.hessian(3 + 2 * r, 3 + 2 * r) = m_rob;
    qp.hessian(4 + 2 * r, 4 + 2 * r) = m_rob;
  }
  qp.cost = Eigen::VectorXd::Zero(nv);
  qp.cost(1) = h * m * s.scene.gravity;  // -(h f), gravity pulls -z
  for (int r = 0; r < n_rob; ++r) {
    Eigen::Vector2d spring = s.kp * (cmd_eff[static_cast<std::size_t>(r)] -
                                     s.robot_actual[static_cast<std::size_t>(r)]);
    const double mag = spring.norm();
    if (mag > sc.robot_force_cap) spring *= sc.robot_force_cap / mag;
    // Momentum carry-over: the robot is not re-accelerated from rest.
    qp.cost.segment<2>(3 + 2 * r) =
        -h * spring - sc.robot_virtual_mass * s.robot_velocity[static_cast<std::size_t>(r)];
  }

  const auto rows = gather_contacts(s, sc);
  const Eigen::Vector2d c(s.object.y, s.object.z);
  const int m_rows = 2 * static_cast<int>(rows.size());
  qp.ineq_A = Eigen::MatrixXd::Zero(m_rows, nv);
  qp.ineq_b = Eigen::VectorXd::Zero(m_rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& cr = rows[i];
    // Separation-rate Jacobians. Extrinsic: object point moving along nu
    // separates. Robot: robot moving along -nu relative to the object point.
    Eigen::RowVectorXd jn = Eigen::RowVectorXd::Zero(nv);
    Eigen::RowVectorXd jt = Eigen::RowVectorXd::Zero(nv);
    const Eigen::Vector2d rrel = cr.point - c;
    if (cr.robot < 0) {
      jn(0) = cr.nu(0);
      jn(1) = cr.nu(1);
      jn(2) = cr.nu(0) * (-rrel(1)) + cr.nu(1) * rrel(0);
      jt(0) = cr.tan(0);
      jt(1) = cr.tan(1);
      jt(2) = cr.tan(0) * (-rrel(1)) + cr.tan(1) * rrel(0);
    } else {
      const Eigen::Vector2d out = -cr.nu;
      jn(3 + 2 * cr.robot) = out(0);
      jn(4 + 2 * cr.robot) = out(1);
      jn(0) = -out(0);
      jn(1) = -out(1);
      jn(2) = -(out(0) * (-rrel(1)) + out(1) * rrel(0));
      jt(3 + 2 * cr.robot) = cr.tan(0);
      jt(4 + 2 * cr.robot) = cr.tan(1);
      jt(0) = -cr.tan(0);
      jt(1) = -cr.tan(1);
      jt(2) = -(cr.tan(0) * (-rrel(1)) + cr.tan(1) * rrel(0));
    }
    // Anitescu cone rows: (jn + mu d jt) u >= -gap/h for d in {+1, -1};
    // penetration is expelled gently rather than in one substep. The
    // mu*|v_t_prev| term cancels the relaxation's slide-separation coupling
    // at steady sliding (the contact would otherwise climb at mu |v_t|).
    double rhs = cr.gap >= 0.0
                     ? -cr.gap / h
                     : std::min(sc.expulsion_factor * (-cr.gap) / h, sc.expulsion_rate_cap);
    rhs -= cr.mu * std::abs(slip.lookup(cr.owner));
    qp.ineq_A.row(2 * static_cast<Eigen::Index>(i)) = jn + cr.mu * jt;
    qp.ineq_A.row(2 * static_cast<Eigen::Index>(i) + 1) = jn - cr.mu * jt;
    qp.ineq_b(2 * static_cast<Eigen::Index>(i)) = rhs;
    qp.ineq_b(2 * static_cast<Eigen::Index>(i) + 1) = rhs;
  }

  const auto rep = opt::solve_qp(qp, 1e-10);
  if (rep.status != opt::SolveStatus::optimal) {
    res.ok = false;
    res.diagnostic = "contact QP " + std::string(opt::to_string(rep.status)) + ": " +
                     rep.diagnostic;
    return res;
  }

  res.ok = true;
  res.object_velocity = rep.solution.head<3>();
  res.robot_velocity.resize(static_cast<std::size_t>(n_rob));
  for (int r = 0; r < n_rob; ++r)
    res.robot_velocity[static_cast<std::size_t>(r)] = rep.solution.segment<2>(3 + 2 * r);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& cr = rows[i];
    const double bp = rep.duals_ineq(2 * static_cast<Eigen::Index>(i));
    const double bm = rep.duals_ineq(2 * static_cast<Eigen::Index>(i) + 1);
    QuasistaticResult::ContactSolution cs;
    cs.owner = cr.owner;
    cs.point = cr.point;
    cs.gap = cr.gap;
    cs.normal_mag = (bp + bm) / h;
    cs.tangential_mag = cr.mu * (bp - bm) / h;
    if (cr.robot >= 0) {
      // Rows are written for the robot; reaction on the object is opposite,
      // i.e. normal_mag pushes along nu (into the object).
      cs.force_on_object = cs.normal_mag * cr.nu - cs.tangential_mag * cr.tan;
      const Eigen::Vector2d vrel =
          res.robot_velocity[static_cast<std::size_t>(cr.robot)] -
          (res.object_velocity.head<2>() +
           res.object_velocity(2) * Eigen::Vector2d(-(cr.point - c)(1), (cr.point - c)(0)));
      cs.slip_rate = cr.tan.dot(vrel);
      // Express the contact-frame tangential in the object's frame so the
      // stored ContactForce convention matches the demonstrations.
      cs.tangential_mag = -cs.tangential_mag;
    } else {
      cs.force_on_object = cs.normal_mag * cr.nu + cs.tangential_mag * cr.tan;
      const Eigen::Vector2d vp = res.object_velocity.head<2>() +
                                 res.object_velocity(2) *
                                     Eigen::Vector2d(-(cr.point - c)(1), (cr.point - c)(0));
      cs.slip_rate = cr.tan.dot(vp);
    }
    res.contacts.push_back(cs);
  }
  return res;
}
}  // namespace

QuasistaticResult solve_quasistatic(const EnvState& s, const std::vector<Eigen::Vector2d>& cmd_eff,
                                    double h, const SimConfig& sc) {
  // Fixed-point iteration on the slide-separation compensation: each pass
  // re-solves the convex relaxation with tangential speeds from the previous
  // pass, converging toward the exact Coulomb solution. The state's slip
  // memory seeds the first pass so steady sliding costs one solve.
  SlipMemory slip = s.slip_memory;
  QuasistaticResult res;
  for (int it = 0; it < sc.slip_fixed_point_iters; ++it) {
    res = solve_quasistatic_once(s, cmd_eff, h, sc, slip);
    if (!res.ok) return res;
    double change = 0.0;
    SlipMemory next;
    for (const auto& cs : res.contacts) {
      next.entries.emplace_back(cs.owner, cs.slip_rate);
      change = std::max(change, std::abs(std::abs(cs.slip_rate) - std::abs(slip.lookup(cs.owner))));
    }
    slip = std::move(next);
    if (change < 1e-9) break;
  }
  res.converged_slip = slip;
  return res;
}

std::vector<std::uint8_t> rasterize_mask(const PlanarPose& pose, const BoxGeometry& geom,
                                         const RasterSpec& spec) {
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(spec.width * spec.height), 0);
  const double cw = (spec.y_max - spec.y_min) / spec.width;
  const double ch = (spec.z_max - spec.z_min) / spec.height;
  const double cth = std::cos(pose.theta), sth = std::sin(pose.theta);
  for (int row = 0; row < spec.height; ++row) {
    const double z = spec.z_max - (row + 0.5) * ch;
    for (int col = 0; col < spec.width; ++col) {
      const double y = spec.y_min + (col + 0.5) * cw;
      // World -> object local.
      const double dy = y - pose.y, dz = z - pose.z;
      const double ly = cth * dy + sth * dz;
      const double lz = -sth * dy + cth * dz;
      if (std::abs(ly) <= geom.half_len && std::abs(lz) <= geom.half_wid)
        grid[static_cast<std::size_t>(row * spec.width + col)] = 1;
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Env
// ---------------------------------------------------------------------------

Env::Env(const TaskSpec& task, const SimConfig& sc, const DomainRandomizationConfig& dr,
         const NormalizationConfig& norm)
    : task_(task), sc_(sc), dr_(dr), norm_(norm) {
  if (!task.valid()) throw ConfigError("Env: invalid task");
}

void Env::bind_demos(const DemoDataset* demos) {
  if (demos && demos->records.empty()) throw ConfigError("Env: empty demonstration source");
  demos_ = demos;
}

int Env::n_extrinsic() const { return 4 * surface_count(task_.scene); }

Env::ResetResult Env::reset(std::uint64_t seed) {
  state_ = EnvState{};
  state_.rng = Rng(seed);
  state_.scene = task_.scene;
  const Demonstration* demo = nullptr;

  if (demos_) {
    const std::size_t idx =
        static_cast<std::size_t>(state_.rng.uniform_index(demos_->records.size()));
    demo = &demos_->records[idx];
    state_.params = demo->params;
  } else if (dr_.randomize_dynamics) {
    state_.params = dr_.params.sample(state_.rng);
  } else if (dr_.fixed_params) {
    state_.params = *dr_.fixed_params;
  } else {
    state_.params = PhysicalParams{};
    state_.params.geometry = dr_.params.nominal_geom;
  }

  // Start pose for the episode's geometry (start z = half_wid).
  const TaskSpec drawn =
      cito::make_pivot_task(task_.kind, state_.params.geometry, task_.horizon, task_.dt);
  state_.object = demo ? demo->object_traj.front() : drawn.start_pose;

  state_.kp = dr_.randomize_dynamics ? state_.rng.uniform(dr_.kp_lo, dr_.kp_hi) : sc_.kp_default;
  // Critical damping for the end effector's actual virtual mass.
  state_.kd = 2.0 * std::sqrt(state_.kp * sc_.robot_virtual_mass);

  double y_off = 0.0;
  Eigen::Vector2d robot_off = Eigen::Vector2d::Zero();
  if (dr_.randomize_init) {
    y_off = state_.rng.uniform(-dr_.init_object_y, dr_.init_object_y);
    robot_off = {state_.rng.uniform(-dr_.init_robot, dr_.init_robot),
                 state_.rng.uniform(-dr_.init_robot, dr_.init_robot)};
  }
  // The wall (or lip) blocks positive offsets; fold them onto the stop.
  state_.object = PlanarPose(state_.object.y + std::min(y_off, 0.0), state_.object.z,
                             state_.object.theta);

  // Robot starts where the demonstration starts, or hovers above the box.
  Eigen::Vector2d robot_start;
  if (demo) {
    robot_start = demo->robot_traj[0][0];
  } else {
    const auto [a, b] = cito::face_segment_world(state_.object, state_.params.geometry, 1);
    robot_start = 0.5 * (a + b) + Eigen::Vector2d(0, sc_.robot_radius + 0.01);
  }
  robot_start += robot_off;
  // Keep the disc above the table and out of the box.
  robot_start(1) = std::max(robot_start(1), state_.scene.table_z + sc_.robot_radius);
  robot_start = push_disc_out(robot_start, state_.object, state_.params.geometry, sc_.robot_radius);

  const int n_rob = task_.n_robots;
  state_.robot_actual.assign(static_cast<std::size_t>(n_rob), robot_start);
  state_.robot_command = state_.robot_actual;
  state_.robot_velocity.assign(static_cast<std::size_t>(n_rob), Eigen::Vector2d::Zero());
  prev_command_ = state_.robot_command;
  state_.last_action = Action::zero(n_rob);
  last_robot_force_.assign(static_cast<std::size_t>(n_rob), Eigen::Vector2d::Zero());

  ResetResult rr;
  rr.observation = observe(dr_.sensor_noise);
  rr.demo = demo;
  return rr;
}

Observation Env::observe(bool with_noise) {
  Observation obs;
  const int ne = n_extrinsic();
  obs.privileged.resize(Observation::privileged_dim(ne));
  obs.sensor.resize(Observation::sensor_dim(task_.n_robots));

  PlanarPose pose = state_.object;
  if (with_noise) {
    const double ny = state_.rng.normal(0.0, dr_.noise_object_pos);
    const double nz = state_.rng.normal(0.0, dr_.noise_object_pos);
    const double na = state_.rng.clipped_normal(0.0, dr_.noise_angle_sigma_deg,
                                                -dr_.noise_angle_max_deg, dr_.noise_angle_max_deg) *
                      M_PI / 180.0;
    pose = PlanarPose(pose.y + ny, pose.z + nz, pose.theta + na);
  }
  obs.privileged.head<3>() = norm_.normalize_pose(pose);
  obs.privileged.segment<7>(3) = norm_.normalize_params(state_.params);
  const auto q = detect_contacts(state_.object, state_.params.geometry, state_.scene, 1e-4);
  for (int i = 0; i < ne; ++i)
    obs.privileged(10 + i) = i < q.signal.size() ? static_cast<double>(q.signal.flags[i]) : 0.0;

  const int n_rob = task_.n_robots;
  for (int r = 0; r < n_rob; ++r) {
    Eigen::Vector2d rp = state_.robot_actual[static_cast<std::size_t>(r)];
    if (with_noise) {
      rp(0) += state_.rng.normal(0.0, dr_.noise_robot_pos);
      rp(1) += state_.rng.normal(0.0, dr_.noise_robot_pos);
    }
    obs.sensor(2 * r) = (rp(0) - norm_.pos_y_offset) / norm_.pos_y_scale;
    obs.sensor(2 * r + 1) = (rp(1) - norm_.pos_z_offset) / norm_.pos_z_scale;
  }
  double d_t = 0.0;
  for (const auto& f : last_robot_force_)
    if (f.norm() > sc_.robot_contact_force_threshold) d_t = 1.0;
  obs.sensor(2 * n_rob) = d_t;
  for (int r = 0; r < n_rob; ++r) {
    Eigen::Vector2d f = last_robot_force_[static_cast<std::size_t>(r)];
    if (with_noise) {
      f(0) += state_.rng.normal(0.0, dr_.noise_force);
      f(1) += state_.rng.normal(0.0, dr_.noise_force);
    }
    obs.sensor.segment<2>(2 * n_rob + 1 + 2 * r) = f / norm_.force_scale;
  }
  return obs;
}

Observation Env::observe_clean() const {
  // const_cast-free copy: noise disabled does not touch the rng.
  Env& self = const_cast<Env&>(*this);
  return self.observe(false);
}

StepOutcome Env::step(const Action& action) {
  if (state_.terminated) throw UsageError("Env::step called after termination");
  const int n_rob = task_.n_robots;
  if (static_cast<int>(action.delta.size()) != n_rob)
    throw ConfigError("Env::step: action robot count mismatch");

  if (state_.object.z < state_.scene.table_z) {
    // Already out of plane (externally corrupted state): terminate.
    state_.terminated = true;
    StepOutcome out;
    out.termination = Termination::out_of_plane_fail;
    out.info.out_of_plane = true;
    out.info.true_pose = state_.object;
    out.info.robot_force_world = last_robot_force_;
    out.info.robot_actual = state_.robot_actual;
    out.info.orientation_error = orientation_error(state_.object.theta, task_.goal_pose.theta);
    out.observation = observe(dr_.sensor_noise);
    return out;
  }

  Action clipped = action;
  for (auto& d : clipped.delta)
    d = d.cwiseMax(-sc_.a_max).cwiseMin(sc_.a_max);

  for (int r = 0; r < n_rob; ++r) {
    auto& cmd = state_.robot_command[static_cast<std::size_t>(r)];
    cmd += clipped.delta[static_cast<std::size_t>(r)];
    // Stiffness-controller saturation: command stays near the actual.
    const Eigen::Vector2d off = cmd - state_.robot_actual[static_cast<std::size_t>(r)];
    const double n = off.norm();
    if (n > sc_.cmd_offset_max)
      cmd = state_.robot_actual[static_cast<std::size_t>(r)] + off * (sc_.cmd_offset_max / n);
  }

  const double h = sc_.dt_control / sc_.n_substeps;
  // The low-level controller interpolates the 10 Hz command across substeps.
  const std::vector<Eigen::Vector2d> cmd_prev = prev_command_;
  prev_command_ = state_.robot_command;
  for (int sub = 0; sub < sc_.n_substeps; ++sub) {
    const double frac = static_cast<double>(sub + 1) / sc_.n_substeps;
    std::vector<Eigen::Vector2d> cmd_sub(static_cast<std::size_t>(n_rob));
    for (int r = 0; r < n_rob; ++r)
      cmd_sub[static_cast<std::size_t>(r)] =
          cmd_prev[static_cast<std::size_t>(r)] +
          frac * (state_.robot_command[static_cast<std::size_t>(r)] -
                  cmd_prev[static_cast<std::size_t>(r)]);
    double hh = h;
    QuasistaticResult qr;
    bool solved = false;
    for (int attempt = 0; attempt < 5; ++attempt) {
      qr = solve_quasistatic(state_, cmd_sub, hh, sc_);
      if (qr.ok) {
        solved = true;
        break;
      }
      hh *= 0.5;
    }
    if (!solved)
      throw NumericalError("Env::step: contact solve failed after halving: " + qr.diagnostic);

    state_.object = PlanarPose(state_.object.y + hh * qr.object_velocity(0),
                               state_.object.z + hh * qr.object_velocity(1),
                               state_.object.theta + hh * qr.object_velocity(2));
    for (int r = 0; r < n_rob; ++r) {
      state_.robot_actual[static_cast<std::size_t>(r)] +=
          hh * qr.robot_velocity[static_cast<std::size_t>(r)];
      state_.robot_velocity[static_cast<std::size_t>(r)] =
          qr.robot_velocity[static_cast<std::size_t>(r)];
    }
    for (auto& f : last_robot_force_) f.setZero();
    for (const auto& cs : qr.contacts) {
      if (cs.owner.kind == ContactOwner::Kind::robot_face)
        last_robot_force_[static_cast<std::size_t>(cs.owner.index)] += cs.force_on_object;
      if (!state_.scene.wall_present && cs.owner.kind == ContactOwner::Kind::corner_surface &&
          cs.owner.other == static_cast<int>(Surface::wall) &&
          cs.normal_mag > state_.scene.lip_capacity)
        state_.lip_broken = true;
    }
    state_.slip_memory = qr.converged_slip;

    // Position projection: remove residual penetration directly.
    for (int it = 0; it < 2; ++it) {
      const auto corners = box_corners(state_.object, state_.params.geometry);
      double pen_table = 0.0, pen_wall = 0.0;
      for (const auto& wc : corners) {
        pen_table = std::max(pen_table, state_.scene.table_z - wc(1));
        pen_wall = std::max(pen_wall, penetration_depth(wc, Surface::wall, state_.scene));
      }
      if (pen_table <= 1e-12 && pen_wall <= 1e-12) break;
      state_.object = PlanarPose(state_.object.y - pen_wall, state_.object.z + pen_table,
                                 state_.object.theta);
    }
    for (int r = 0; r < n_rob; ++r) {
      auto& rp = state_.robot_actual[static_cast<std::size_t>(r)];
      rp(1) = std::max(rp(1), state_.scene.table_z + sc_.robot_radius);
      rp = push_disc_out(rp, state_.object, state_.params.geometry, sc_.robot_radius);
    }
  }

  state_.last_action = clipped;
  state_.step_count += 1;

  StepOutcome outcome;
  outcome.info.true_pose = state_.object;
  outcome.info.true_contacts =
      detect_contacts(state_.object, state_.params.geometry, state_.scene, 1e-4).signal;
  outcome.info.robot_force_world = last_robot_force_;
  outcome.info.robot_actual = state_.robot_actual;
  outcome.info.orientation_error =
      orientation_error(state_.object.theta, task_.goal_pose.theta);

  if (outcome.info.orientation_error <= sc_.success_theta_tol) {
    outcome.termination = Termination::success;
  } else if (state_.object.z < state_.scene.table_z) {
    outcome.termination = Termination::out_of_plane_fail;
    outcome.info.out_of_plane = true;
  } else if (state_.step_count >= sc_.max_episode_steps) {
    outcome.termination = Termination::timeout;
  }
  state_.terminated = outcome.termination != Termination::running;
  outcome.observation = observe(dr_.sensor_noise);
  return outcome;
}

}  // namespace pk::sim
