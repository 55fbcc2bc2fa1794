#include "pivotkit/cito.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <thread>

#include "pivotkit/errors.hpp"
#include "pivotkit/opt/bnb.hpp"
#include "pivotkit/opt/nlp.hpp"

namespace pk::cito {

using namespace pk::scene;
using opt::SolveStatus;

namespace {

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a(0) * b(1) - a(1) * b(0);
}

Eigen::Matrix2d rot(double th) {
  Eigen::Matrix2d R;
  R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  return R;
}

double face_length(const BoxGeometry& g, int face) {
  return (face == 0 || face == 2) ? 2.0 * g.half_wid : 2.0 * g.half_len;
}

double pair_mu(const PhysicalParams& p, Surface s) {
  return s == Surface::table ? p.mu_pair_table() : p.mu_pair_wall();
}

}  // namespace

Eigen::Vector2d face_inward_normal_world(const PlanarPose& pose, int face) {
  return -(rot(pose.theta) * face_normal_local(face));
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> face_segment_world(const PlanarPose& pose,
                                                               const BoxGeometry& geom, int face) {
  const auto corners = box_corners(pose, geom);
  const auto fc = face_corners(face);
  return {corners[fc[0]], corners[fc[1]]};
}

Eigen::Vector2d force_world(const ContactForce& f, const Eigen::Vector2d& nu) {
  const Eigen::Vector2d t(nu(1), -nu(0));
  return f.normal_mag * nu + f.tangential_mag * t;
}

int num_extrinsic_candidates(const SceneConfig& scene) { return 4 * surface_count(scene); }

TaskSpec make_pivot_task(TaskKind kind, const BoxGeometry& geom, int horizon, double dt) {
  TaskSpec task;
  task.kind = kind;
  task.dt = dt;
  task.n_robots = 1;
  task.scene.table_z = 0.0;
  task.scene.wall_y = 0.30;
  if (kind == TaskKind::with_wall) {
    task.scene.wall_present = true;
    task.scene.wall_height = 0.30;
    task.scene.virtual_wall_height = 0.0;
    task.horizon = horizon > 0 ? horizon : 60;
    task.goal_pose = PlanarPose(task.scene.wall_y - geom.half_wid, geom.half_len, -M_PI / 2);
  } else {
    task.scene.wall_present = false;
    task.scene.wall_height = 0.0;
    task.scene.virtual_wall_height = 0.001;
    task.horizon = horizon > 0 ? horizon : 150;
    // Pinned rotation about the corner held at the lip. The goal tilt stops
    // where the landing corner is still 1 mm above the lip band, which keeps
    // the whole planned motion clear of the lip plane.
    const double phi =
        std::acos(std::min(1.0, (task.scene.virtual_wall_height + 0.001) / (2 * geom.half_wid)));
    const double c = std::cos(phi), s = std::sin(phi);
    task.goal_pose = PlanarPose(task.scene.wall_y - geom.half_len * c + geom.half_wid * s,
                                geom.half_len * s + geom.half_wid * c, -phi);
  }
  task.start_pose = PlanarPose(task.scene.wall_y - geom.half_len, geom.half_wid, 0.0);
  return task;
}

PhysicalParams ParamRanges::sample(Rng& rng) const {
  PhysicalParams p;
  p.mass = rng.uniform(mass_lo, mass_hi);
  p.mu_table = rng.uniform(mu_env_lo, mu_env_hi);
  p.mu_wall = rng.uniform(mu_env_lo, mu_env_hi);
  p.mu_object = rng.uniform(mu_obj_lo, mu_obj_hi);
  p.mu_robot = rng.uniform(mu_robot_lo, mu_robot_hi);
  p.geometry.half_len = nominal_geom.half_len * rng.uniform(size_scale_lo, size_scale_hi);
  p.geometry.half_wid = nominal_geom.half_wid * rng.uniform(size_scale_lo, size_scale_hi);
  return p;
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

namespace {

// Non-penetration constraint values for one pose: table per corner, wall per
// corner (plane limited to its height band). The trajectory optimizer treats
// the virtual lip as a full plane inside its band; the goal pose of the
// without-wall task is constructed so the landing corner stays above it.
// support_k marks the corner pinned to the table by the support equality; its
// wall constraint is the plain halfplane y <= wall_y (it is inside the band by
// construction), which avoids a max() kink that traps the solver when the
// corner strays past the lip plane.
void pose_constraints(const Eigen::Vector3d& q, const BoxGeometry& geom, const SceneConfig& scene,
                      Eigen::VectorXd& out, int offset, int support_k = -1) {
  const PlanarPose pose(q(0), q(1), q(2));
  const auto corners = box_corners(pose, geom);
  const bool wall = scene.has_wall_surface();
  const double h_eff = scene.effective_wall_height();
  for (int k = 0; k < 4; ++k) {
    out(offset + k) = corners[k](1) - scene.table_z;
    if (wall) {
      const double d = signed_distance(corners[k], Surface::wall, scene);
      out(offset + 4 + k) =
          k == support_k ? d : std::max(d, corners[k](1) - scene.table_z - h_eff);
    }
  }
}

int pose_constraint_count(const SceneConfig& scene) { return scene.has_wall_surface() ? 8 : 4; }

// Corner heights of a pose (world z of each corner).
std::array<double, 4> corner_heights(const Eigen::Vector3d& q, const BoxGeometry& geom) {
  const auto corners = box_corners(PlanarPose(q(0), q(1), q(2)), geom);
  return {corners[0](1), corners[1](1), corners[2](1), corners[3](1)};
}

// Projects one reference pose onto the feasible set, minimizing the
// Q-weighted distance, with the quasistatic support requirement that some
// corner rests on the table. The support corner is enumerated (one smooth
// equality per candidate) instead of a kinked min() constraint.
opt::SolveReport project_pose(const Eigen::Vector3d& ref, const Eigen::Vector3d& x0,
                              const Eigen::Vector3d& qw, const BoxGeometry& geom,
                              const SceneConfig& scene, int* support_corner = nullptr) {
  const int nc = pose_constraint_count(scene);
  auto cost = [=](const Eigen::VectorXd& x) {
    return qw(0) * (x(0) - ref(0)) * (x(0) - ref(0)) + qw(1) * (x(1) - ref(1)) * (x(1) - ref(1)) +
           qw(2) * (x(2) - ref(2)) * (x(2) - ref(2));
  };
  auto cost_grad = [=](const Eigen::VectorXd& x) {
    Eigen::VectorXd g(3);
    g << 2 * qw(0) * (x(0) - ref(0)), 2 * qw(1) * (x(1) - ref(1)), 2 * qw(2) * (x(2) - ref(2));
    return g;
  };
  const auto h0 = corner_heights(x0, geom);
  const double hmin = *std::min_element(h0.begin(), h0.end());

  opt::SolveReport best;
  best.status = SolveStatus::infeasible;
  double best_cost = 1e18;
  for (int k = 0; k < 4; ++k) {
    if (h0[static_cast<std::size_t>(k)] > hmin + 0.06) continue;  // cannot be the support nearby
    opt::NonlinearProgram nlp;
    nlp.cost = cost;
    nlp.cost_grad = cost_grad;
    nlp.ineq = [=](const Eigen::VectorXd& x) {
      Eigen::VectorXd out(nc);
      pose_constraints(x.head<3>(), geom, scene, out, 0, k);
      return out;
    };
    nlp.eq = [=](const Eigen::VectorXd& x) {
      return Eigen::VectorXd::Constant(
          1, corner_heights(x.head<3>(), geom)[static_cast<std::size_t>(k)] - scene.table_z);
    };
    nlp.x0 = x0;
    opt::NlpOptions opts;
    opts.tol = 5e-7;
    opts.max_outer = 30;
    opts.max_inner = 120;
    const auto rep = opt::solve_nlp(nlp, opts);
    if (rep.ok() && rep.max_violation <= 1e-6) {
      const double c = cost(rep.solution);
      if (c < best_cost - 1e-14) {
        best_cost = c;
        best = rep;
        if (support_corner) *support_corner = k;
      }
    }
  }
  return best;
}

// Snaps near-contact corners exactly onto their surfaces (junction corners
// pinned to the junction, sticking corners pinned to their previous position)
// with a minimal pose adjustment. Removes the O(solver tol) contact noise
// that would otherwise show up as phantom slip in the complementarity checks.
void snap_contacts(std::vector<PlanarPose>& traj, const BoxGeometry& geom,
                   const SceneConfig& scene, double snap_tol) {
  const int n_surf = surface_count(scene);
  std::array<Eigen::Vector2d, 4> prev_corners{};
  std::array<std::array<bool, 2>, 4> prev_on{};

  const Eigen::Vector2d local[4] = {{geom.half_len, geom.half_wid},
                                    {-geom.half_len, geom.half_wid},
                                    {-geom.half_len, -geom.half_wid},
                                    {geom.half_len, -geom.half_wid}};

  for (std::size_t t = 0; t < traj.size(); ++t) {
    // Classify near-contacts and build target equations.
    enum class Mode { none, sdf_table, sdf_wall, pin };
    std::array<Mode, 4> mode{Mode::none, Mode::none, Mode::none, Mode::none};
    std::array<Eigen::Vector2d, 4> pin_to{};
    auto corners = box_corners(traj[t], geom);
    std::array<std::array<bool, 2>, 4> on{};
    int eq_count = 0;
    for (int k = 0; k < 4; ++k) {
      const bool near_table = std::abs(corners[k](1) - scene.table_z) <= snap_tol;
      const bool near_wall = n_surf > 1 && wall_band_contains(corners[k], scene, snap_tol) &&
                             std::abs(scene.wall_y - corners[k](0)) <= snap_tol;
      on[k][0] = near_table;
      on[k][1] = near_wall;
      if (near_table && near_wall && eq_count + 2 <= 3) {
        mode[k] = Mode::pin;
        pin_to[k] = {scene.wall_y, scene.table_z};
        eq_count += 2;
      } else if (near_table) {
        const bool sticking = t > 0 && prev_on[k][0] &&
                              (corners[k] - prev_corners[k]).norm() <= 2.0 * snap_tol;
        if (sticking && eq_count + 2 <= 3) {
          mode[k] = Mode::pin;
          pin_to[k] = prev_corners[k];
          eq_count += 2;
        } else if (eq_count + 1 <= 3) {
          mode[k] = Mode::sdf_table;
          eq_count += 1;
        }
      } else if (near_wall && eq_count + 1 <= 3) {
        mode[k] = Mode::sdf_wall;
        eq_count += 1;
      }
    }
    if (eq_count > 0) {
      for (int iter = 0; iter < 3; ++iter) {
        corners = box_corners(traj[t], geom);
        const double cth = std::cos(traj[t].theta), sth = std::sin(traj[t].theta);
        Eigen::MatrixXd A(eq_count, 3);
        Eigen::VectorXd b(eq_count);
        int ri = 0;
        for (int k = 0; k < 4; ++k) {
          if (mode[k] == Mode::none) continue;
          Eigen::Matrix<double, 2, 3> J;
          J << 1, 0, -sth * local[k](0) - cth * local[k](1), 0, 1,
              cth * local[k](0) - sth * local[k](1);
          if (mode[k] == Mode::pin) {
            A.row(ri) = J.row(0);
            b(ri++) = pin_to[k](0) - corners[k](0);
            A.row(ri) = J.row(1);
            b(ri++) = pin_to[k](1) - corners[k](1);
          } else if (mode[k] == Mode::sdf_table) {
            A.row(ri) = J.row(1);
            b(ri++) = scene.table_z - corners[k](1);
          } else {
            A.row(ri) = J.row(0);
            b(ri++) = scene.wall_y - corners[k](0);
          }
        }
        const Eigen::Vector3d dq = A.completeOrthogonalDecomposition().solve(b);
        traj[t] = PlanarPose(traj[t].y + dq(0), traj[t].z + dq(1), traj[t].theta + dq(2));
        if (b.cwiseAbs().maxCoeff() < 1e-13) break;
      }
      corners = box_corners(traj[t], geom);
    }
    prev_corners = corners;
    prev_on = on;
  }
}

}  // namespace

Feasible<Stage1Result> stage1_kinematic(const TaskSpec& task, const PhysicalParams& params,
                                        const CitoParams& cp) {
  Feasible<Stage1Result> out;
  if (!task.valid() || !params.valid()) {
    out.diagnostic = "invalid task or params";
    return out;
  }
  const int T = task.horizon;
  const BoxGeometry& geom = params.geometry;
  const int nc = pose_constraint_count(task.scene);

  // Endpoint feasibility.
  Eigen::VectorXd g(nc);
  for (const PlanarPose* p : {&task.start_pose, &task.goal_pose}) {
    pose_constraints(p->vec(), geom, task.scene, g, 0);
    if (g.minCoeff() < -1e-9) {
      out.diagnostic = "start or goal pose in collision";
      return out;
    }
  }

  // Linear interpolation reference; the angle moves along the wrapped
  // difference so 0 -> -pi/2 interpolates through negative angles.
  const double dth = wrap_angle(task.goal_pose.theta - task.start_pose.theta);
  std::vector<Eigen::Vector3d> ref(T + 1);
  for (int t = 0; t <= T; ++t) {
    const double a = static_cast<double>(t) / T;
    ref[t] = {task.start_pose.y + a * (task.goal_pose.y - task.start_pose.y),
              task.start_pose.z + a * (task.goal_pose.z - task.start_pose.z),
              task.start_pose.theta + a * dth};
  }

  std::vector<PlanarPose> traj(T + 1);
  traj[0] = task.start_pose;
  traj[T] = task.goal_pose;
  std::vector<int> support(T + 1, -1);
  Eigen::Vector3d warm = task.start_pose.vec();
  for (int t = 1; t < T; ++t) {
    const auto rep = project_pose(ref[t], warm, cp.q_weight, geom, task.scene, &support[t]);
    if (!rep.ok() || rep.max_violation > 1e-6) {
      out.diagnostic =
          "stage1 projection failed at step " + std::to_string(t) + ": " + rep.diagnostic;
      return out;
    }
    traj[t] = PlanarPose(rep.solution(0), rep.solution(1), rep.solution(2));
    warm = rep.solution;
  }

  // Velocity-bound check; the per-step decomposition is exact when slack.
  bool vel_ok = true;
  for (int t = 0; t < T && vel_ok; ++t) {
    const Eigen::Vector3d d = traj[t + 1].vec() - traj[t].vec();
    for (int j = 0; j < 3; ++j)
      if (std::abs(j == 2 ? wrap_angle(d(2)) : d(j)) > cp.vel_bound(j) + 1e-9) vel_ok = false;
  }
  if (!vel_ok) {
    // Monolithic fallback over all interior poses.
    const int n = 3 * (T - 1);
    opt::NonlinearProgram nlp;
    nlp.cost = [&, T](const Eigen::VectorXd& x) {
      double c = 0;
      for (int t = 1; t < T; ++t)
        for (int j = 0; j < 3; ++j) {
          const double d = x(3 * (t - 1) + j) - ref[t](j);
          c += cp.q_weight(j) * d * d;
        }
      return c;
    };
    nlp.eq = [&, T](const Eigen::VectorXd& x) {
      // Fixed support-corner pattern from the per-step pass.
      Eigen::VectorXd v(T - 1);
      for (int t = 1; t < T; ++t) {
        const int k = support[static_cast<std::size_t>(t)];
        const auto h = corner_heights(x.segment<3>(3 * (t - 1)), geom);
        v(t - 1) = (k >= 0 ? h[static_cast<std::size_t>(k)]
                           : *std::min_element(h.begin(), h.end())) -
                   task.scene.table_z;
      }
      return v;
    };
    nlp.ineq = [&, T, nc](const Eigen::VectorXd& x) {
      Eigen::VectorXd v(nc * (T - 1) + 6 * T);
      for (int t = 1; t < T; ++t)
        pose_constraints(x.segment<3>(3 * (t - 1)), geom, task.scene, v, nc * (t - 1),
                         support[static_cast<std::size_t>(t)]);
      int off = nc * (T - 1);
      auto qat = [&](int t) -> Eigen::Vector3d {
        if (t == 0) return task.start_pose.vec();
        if (t == T) return task.goal_pose.vec();
        return x.segment<3>(3 * (t - 1));
      };
      for (int t = 0; t < T; ++t) {
        const Eigen::Vector3d d = qat(t + 1) - qat(t);
        for (int j = 0; j < 3; ++j) {
          v(off++) = cp.vel_bound(j) - d(j);
          v(off++) = cp.vel_bound(j) + d(j);
        }
      }
      return v;
    };
    nlp.x0.resize(n);
    for (int t = 1; t < T; ++t) nlp.x0.segment<3>(3 * (t - 1)) = traj[t].vec();
    opt::NlpOptions opts;
    opts.tol = 5e-7;
    opts.max_outer = 40;
    opts.max_inner = 600;
    const auto rep = opt::solve_nlp(nlp, opts);
    if (!rep.ok() || rep.max_violation > 1e-6) {
      out.diagnostic = "stage1 monolithic solve failed: " + rep.diagnostic;
      return out;
    }
    for (int t = 1; t < T; ++t)
      traj[t] = PlanarPose(rep.solution(3 * (t - 1)), rep.solution(3 * (t - 1) + 1),
                           rep.solution(3 * (t - 1) + 2));
  }

  snap_contacts(traj, geom, task.scene, cp.contact_tol);

  Stage1Result result;
  result.object_traj = traj;
  result.candidates.resize(T + 1);
  const int n_surf = surface_count(task.scene);
  for (int t = 0; t <= T; ++t) {
    const auto corners = box_corners(traj[t], geom);
    for (int k = 0; k < 4; ++k) {
      if (std::abs(corners[k](1) - task.scene.table_z) <= cp.contact_tol)
        result.candidates[t].push_back(candidate_index(k, 0, n_surf));
      if (n_surf > 1 && wall_band_contains(corners[k], task.scene, cp.contact_tol) &&
          std::abs(signed_distance(corners[k], Surface::wall, task.scene)) <= cp.contact_tol)
        result.candidates[t].push_back(candidate_index(k, 1, n_surf));
    }
  }
  out.value = std::move(result);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

namespace {

struct FaceWindow {
  bool usable = false;
  double s_lo = 0.0, s_hi = 1.0;
};

// Feasible placement window for the robot disc center along a face, clipped
// by table/wall clearance, expressed in the face parameter s.
FaceWindow face_placement_window(const PlanarPose& pose, const BoxGeometry& geom, int face,
                                 const SceneConfig& scene, double radius) {
  FaceWindow w;
  const auto corners = box_corners(pose, geom);
  const auto fc = face_corners(face);
  const Eigen::Vector2d a = corners[fc[0]], b = corners[fc[1]];
  const Eigen::Vector2d nu = face_inward_normal_world(pose, face);  // into object
  const Eigen::Vector2d center_a = a - radius * nu;                 // disc center at s = 0
  const Eigen::Vector2d center_b = b - radius * nu;
  const double clear = 0.5 * radius;

  double lo = 0.0, hi = 1.0;
  auto clip_halfplane = [&](double va, double vb, double min_v) {
    // Require va + s (vb - va) >= min_v on [lo, hi].
    const double d = vb - va;
    if (std::abs(d) < 1e-12) {
      if (va < min_v) {
        lo = 1.0;
        hi = 0.0;
      }
      return;
    }
    const double s_cross = (min_v - va) / d;
    if (d > 0)
      lo = std::max(lo, s_cross);
    else
      hi = std::min(hi, s_cross);
  };
  clip_halfplane(center_a(1) - scene.table_z, center_b(1) - scene.table_z, clear);
  if (scene.has_wall_surface() && scene.wall_present) {
    clip_halfplane(scene.wall_y - center_a(0), scene.wall_y - center_b(0), clear);
  }
  // The 1 mm virtual lip never blocks the robot disc (radius 5 mm rides over
  // it), so no wall clipping for the virtual case.
  if (hi - lo > 1e-6) {
    w.usable = true;
    w.s_lo = lo;
    w.s_hi = hi;
  }
  return w;
}

struct PrevRobotState {
  bool in_contact = false;
  int face = -1;
  double s = 0.5;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  bool has_position = false;
  int free_steps = 0;
};

}  // namespace

Feasible<Stage2Solution> stage2_contact_milp(const TaskSpec& task, const PhysicalParams& params,
                                             const Stage1Result& stage1, const CitoParams& cp) {
  Feasible<Stage2Solution> out;
  const int T = task.horizon;
  const int n_surf = surface_count(task.scene);
  const int n_cand = num_extrinsic_candidates(task.scene);
  const int n_rob = task.n_robots;
  const BoxGeometry& geom = params.geometry;
  const double mg = params.mass * task.scene.gravity;

  Stage2Solution sol;
  sol.object_traj = stage1.object_traj;
  sol.robot_contacts.assign(n_rob, std::vector<RobotContact>(T + 1));
  sol.extrinsic_forces.assign(n_cand, std::vector<ContactForce>(T + 1));
  sol.extrinsic_active.assign(n_cand, std::vector<std::uint8_t>(T + 1, 0));

  std::vector<PrevRobotState> prev(n_rob);
  std::vector<double> prev_hint;
  std::vector<std::pair<int, int>> prev_hint_keys;  // (kind: -1 robot face, candidate idx)

  for (int t = 0; t <= T; ++t) {
    const PlanarPose& pose = stage1.object_traj[t];
    const Eigen::Vector2d c(pose.y, pose.z);
    const auto corners = box_corners(pose, geom);
    const auto corners_next = box_corners(stage1.object_traj[std::min(t + 1, T)], geom);

    struct Cand {
      int idx;
      int corner;
      Surface surf;
      Eigen::Vector2d loc, nu, tan;
      double v_tan;
      double mu;
    };
    std::vector<Cand> cands;
    for (int idx : stage1.candidates[t]) {
      Cand cd;
      cd.idx = idx;
      cd.corner = idx / n_surf;
      cd.surf = static_cast<Surface>(idx % n_surf);
      cd.loc = corners[cd.corner];
      cd.nu = surface_normal(cd.surf, task.scene);
      cd.tan = surface_tangent(cd.surf, task.scene);
      const Eigen::Vector2d vel =
          t < T ? ((corners_next[cd.corner] - corners[cd.corner]) / task.dt).eval()
                : Eigen::Vector2d::Zero().eval();
      cd.v_tan = cd.tan.dot(vel);
      cd.mu = pair_mu(params, cd.surf);
      cands.push_back(cd);
    }

    struct FaceVar {
      bool usable = false;
      double s_lo = 0, s_hi = 1;
      double s_anchor = 0.5;
      Eigen::Vector2d nu, tan, mid, a, edge;
      double L = 0;
    };
    std::vector<std::vector<FaceVar>> faces(n_rob, std::vector<FaceVar>(4));
    for (int r = 0; r < n_rob; ++r) {
      for (int f = 0; f < 4; ++f) {
        FaceVar fv;
        const auto w = face_placement_window(pose, geom, f, task.scene, cp.robot_radius);
        if (!w.usable) continue;
        const auto [a, b] = face_segment_world(pose, geom, f);
        fv.nu = face_inward_normal_world(pose, f);
        fv.tan = {fv.nu(1), -fv.nu(0)};
        fv.L = face_length(geom, f);
        fv.a = a;
        fv.edge = b - a;
        fv.mid = 0.5 * (a + b);
        double lo = w.s_lo, hi = w.s_hi;
        if (prev[r].in_contact) {
          if (prev[r].face != f) continue;  // face switch needs a free step
          const double ds = cp.v_max_robot * 0.8 / fv.L;
          lo = std::max(lo, prev[r].s - ds);
          hi = std::min(hi, prev[r].s + ds);
          if (hi < lo) continue;
          fv.s_anchor = std::clamp(prev[r].s, lo, hi);
        } else if (prev[r].has_position) {
          const double reach = cp.v_max_robot * (prev[r].free_steps + 1);
          const Eigen::Vector2d pa = a - cp.robot_radius * fv.nu;
          const Eigen::Vector2d d = b - a;
          const double s_c = std::clamp(d.dot(prev[r].position - pa) / d.squaredNorm(), 0.0, 1.0);
          const Eigen::Vector2d nearest = pa + s_c * d;
          const double dist = (nearest - prev[r].position).norm();
          if (dist > reach) continue;
          const double span = std::sqrt(std::max(0.0, reach * reach - dist * dist)) / fv.L;
          lo = std::max(lo, s_c - span);
          hi = std::min(hi, s_c + span);
          if (hi < lo) continue;
          fv.s_anchor = std::clamp(s_c, lo, hi);
        } else {
          fv.s_anchor = 0.5 * (lo + hi);
        }
        fv.usable = true;
        fv.s_lo = lo;
        fv.s_hi = hi;
        faces[r][f] = fv;
      }
    }

    // --- Per-step MILP ---
    struct VarMap {
      int fn, ft, tau, z, slack;
    };
    std::vector<std::vector<int>> face_var(n_rob, std::vector<int>(4, -1));
    std::vector<VarMap> vmaps;
    std::vector<std::pair<int, int>> binary_keys;  // (robot face | candidate)
    int nv = 0;
    for (int r = 0; r < n_rob; ++r)
      for (int f = 0; f < 4; ++f)
        if (faces[r][f].usable) {
          face_var[r][f] = static_cast<int>(vmaps.size());
          vmaps.push_back({nv, nv + 1, nv + 2, nv + 3, nv + 4});
          nv += 5;
        }
    const int cand_base = nv;
    nv += 3 * static_cast<int>(cands.size());

    opt::MixedIntegerLP milp;
    auto& lp = milp.lp;
    lp.cost = Eigen::VectorXd::Zero(nv);
    lp.lower = Eigen::VectorXd::Zero(nv);
    lp.upper = Eigen::VectorXd::Zero(nv);
    const double tau_max = cp.robot_force_max * 0.5;

    {
      int vi = 0;
      for (int r = 0; r < n_rob; ++r)
        for (int f = 0; f < 4; ++f) {
          if (face_var[r][f] < 0) continue;
          const auto& m = vmaps[vi++];
          lp.upper(m.fn) = cp.robot_force_max;
          lp.lower(m.ft) = -cp.robot_force_max;
          lp.upper(m.ft) = cp.robot_force_max;
          lp.lower(m.tau) = -tau_max;
          lp.upper(m.tau) = tau_max;
          lp.upper(m.z) = 1;
          lp.upper(m.slack) = 2 * tau_max;
          lp.cost(m.slack) = 1.0;
          lp.cost(m.fn) = 1e-3;
          lp.cost(m.z) = 1e-6;
          milp.binary_indices.push_back(m.z);
          binary_keys.emplace_back(-1, r * 4 + f);
        }
    }
    const bool lip = !task.scene.wall_present && task.scene.has_wall_surface();
    for (std::size_t e = 0; e < cands.size(); ++e) {
      const int en = cand_base + 3 * static_cast<int>(e);
      lp.upper(en) = (lip && cands[e].surf == Surface::wall)
                         ? 0.8 * task.scene.lip_capacity
                         : cp.env_force_max;
      lp.lower(en + 1) = -cp.env_force_max;
      lp.upper(en + 1) = cp.env_force_max;
      lp.upper(en + 2) = 1;
      lp.cost(en) = 1e-3;
      lp.cost(en + 2) = 1e-6;
      milp.binary_indices.push_back(en + 2);
      binary_keys.emplace_back(1, cands[e].idx);
    }

    std::vector<Eigen::RowVectorXd> eq_rows;
    std::vector<double> eq_rhs;
    Eigen::RowVectorXd fy = Eigen::RowVectorXd::Zero(nv);
    Eigen::RowVectorXd fz = Eigen::RowVectorXd::Zero(nv);
    Eigen::RowVectorXd mrow = Eigen::RowVectorXd::Zero(nv);
    for (int r = 0; r < n_rob; ++r)
      for (int f = 0; f < 4; ++f) {
        const int vi = face_var[r][f];
        if (vi < 0) continue;
        const auto& m = vmaps[vi];
        const auto& fv = faces[r][f];
        fy(m.fn) += fv.nu(0);
        fy(m.ft) += fv.tan(0);
        fz(m.fn) += fv.nu(1);
        fz(m.ft) += fv.tan(1);
        mrow(m.tau) += 1.0;
      }
    for (std::size_t e = 0; e < cands.size(); ++e) {
      const int en = cand_base + 3 * static_cast<int>(e);
      fy(en) += cands[e].nu(0);
      fy(en + 1) += cands[e].tan(0);
      fz(en) += cands[e].nu(1);
      fz(en + 1) += cands[e].tan(1);
      const Eigen::Vector2d d = cands[e].loc - c;
      mrow(en) += cross2(d, cands[e].nu);
      mrow(en + 1) += cross2(d, cands[e].tan);
    }
    eq_rows.push_back(fy);
    eq_rhs.push_back(0.0);
    eq_rows.push_back(fz);
    eq_rhs.push_back(mg);
    eq_rows.push_back(mrow);
    eq_rhs.push_back(0.0);
    for (std::size_t e = 0; e < cands.size(); ++e) {
      if (std::abs(cands[e].v_tan) > cp.slip_tol) {
        // Sliding contact: force on the cone boundary opposing the slip.
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
        const int en = cand_base + 3 * static_cast<int>(e);
        row(en + 1) = 1.0;
        row(en) = (cands[e].v_tan > 0 ? 1.0 : -1.0) * cands[e].mu;
        eq_rows.push_back(row);
        eq_rhs.push_back(0.0);
      }
    }

    std::vector<Eigen::RowVectorXd> in_rows;
    std::vector<double> in_rhs;
    auto add_row = [&](const Eigen::RowVectorXd& row, double rhs) {
      in_rows.push_back(row);
      in_rhs.push_back(rhs);
    };
    const double mu_r = params.mu_pair_robot();
    for (int r = 0; r < n_rob; ++r) {
      Eigen::RowVectorXd zsum = Eigen::RowVectorXd::Zero(nv);
      bool any = false;
      for (int f = 0; f < 4; ++f) {
        const int vi = face_var[r][f];
        if (vi < 0) continue;
        any = true;
        const auto& m = vmaps[vi];
        const auto& fv = faces[r][f];
        zsum(m.z) = -1.0;
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
        row(m.fn) = mu_r;
        row(m.ft) = -1.0;
        add_row(row, 0.0);
        row(m.ft) = 1.0;
        add_row(row, 0.0);
        row.setZero();
        row(m.z) = cp.robot_force_max;
        row(m.fn) = -1.0;
        add_row(row, 0.0);
        milp.couplings.push_back({static_cast<int>(in_rows.size()) - 1, m.z, cp.robot_force_max});
        // tau window: tau - tau_mid(F) in [(s_lo - 1/2) L fn, (s_hi - 1/2) L fn]
        const Eigen::Vector2d d = fv.mid - c;
        const double cn = cross2(d, fv.nu), ct = cross2(d, fv.tan);
        row.setZero();
        row(m.tau) = 1.0;
        row(m.fn) = -cn - (fv.s_lo - 0.5) * fv.L;
        row(m.ft) = -ct;
        add_row(row, 0.0);
        row.setZero();
        row(m.tau) = -1.0;
        row(m.fn) = cn + (fv.s_hi - 0.5) * fv.L;
        row(m.ft) = ct;
        add_row(row, 0.0);
        // |tau| <= tau_max z keeps tau at zero when the face is inactive.
        row.setZero();
        row(m.z) = tau_max;
        row(m.tau) = -1.0;
        add_row(row, 0.0);
        row.setZero();
        row(m.z) = tau_max;
        row(m.tau) = 1.0;
        add_row(row, 0.0);
        // Anchor slack: |tau - tau_anchor(F)| <= slack.
        const double an = cn + (fv.s_anchor - 0.5) * fv.L;
        row.setZero();
        row(m.slack) = 1.0;
        row(m.tau) = -1.0;
        row(m.fn) = an;
        row(m.ft) = ct;
        add_row(row, 0.0);
        row.setZero();
        row(m.slack) = 1.0;
        row(m.tau) = 1.0;
        row(m.fn) = -an;
        row(m.ft) = -ct;
        add_row(row, 0.0);
      }
      if (any) add_row(zsum, -1.0);
    }
    for (std::size_t e = 0; e < cands.size(); ++e) {
      const int en = cand_base + 3 * static_cast<int>(e);
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
      row(en) = cands[e].mu;
      row(en + 1) = -1.0;
      add_row(row, 0.0);
      row.setZero();
      row(en) = cands[e].mu;
      row(en + 1) = 1.0;
      add_row(row, 0.0);
      row.setZero();
      row(en + 2) = cp.env_force_max;
      row(en) = -1.0;
      add_row(row, 0.0);
      milp.couplings.push_back({static_cast<int>(in_rows.size()) - 1, en + 2, cp.env_force_max});
    }

    lp.eq_A.resize(static_cast<Eigen::Index>(eq_rows.size()), nv);
    lp.eq_b.resize(static_cast<Eigen::Index>(eq_rows.size()));
    for (std::size_t i = 0; i < eq_rows.size(); ++i) {
      lp.eq_A.row(static_cast<Eigen::Index>(i)) = eq_rows[i];
      lp.eq_b(static_cast<Eigen::Index>(i)) = eq_rhs[i];
    }
    lp.ineq_A.resize(static_cast<Eigen::Index>(in_rows.size()), nv);
    lp.ineq_b.resize(static_cast<Eigen::Index>(in_rhs.size()));
    for (std::size_t i = 0; i < in_rows.size(); ++i) {
      lp.ineq_A.row(static_cast<Eigen::Index>(i)) = in_rows[i];
      lp.ineq_b(static_cast<Eigen::Index>(i)) = in_rhs[i];
    }

    // Seed the incumbent from the previous step's binary pattern.
    if (!prev_hint.empty()) {
      std::vector<double> hint(binary_keys.size(), 0.0);
      for (std::size_t i = 0; i < binary_keys.size(); ++i) {
        for (std::size_t j = 0; j < prev_hint_keys.size(); ++j)
          if (prev_hint_keys[j] == binary_keys[i]) hint[i] = prev_hint[j];
      }
      milp.incumbent_hint = hint;
    }

    opt::BnbOptions bopts;
    bopts.node_budget = cp.bnb_node_budget;
    const auto rep = opt::branch_and_bound(milp, bopts);
    if (rep.status != SolveStatus::optimal) {
      out.diagnostic =
          "stage2 infeasible at step " + std::to_string(t) + " (" + opt::to_string(rep.status) + ")";
      return out;
    }

    prev_hint.assign(milp.binary_indices.size(), 0.0);
    prev_hint_keys = binary_keys;
    for (std::size_t i = 0; i < milp.binary_indices.size(); ++i)
      prev_hint[i] = rep.solution(milp.binary_indices[i]);

    for (int r = 0; r < n_rob; ++r) {
      RobotContact rc;
      for (int f = 0; f < 4; ++f) {
        const int vi = face_var[r][f];
        if (vi < 0) continue;
        const auto& m = vmaps[vi];
        if (rep.solution(m.z) > 0.5 && rep.solution(m.fn) > 1e-9) {
          const auto& fv = faces[r][f];
          rc.active = true;
          rc.face = f;
          rc.force.normal_mag = rep.solution(m.fn);
          rc.force.tangential_mag = rep.solution(m.ft);
          const Eigen::Vector2d d = fv.mid - c;
          const double tau_mid = cross2(d, fv.nu) * rc.force.normal_mag +
                                 cross2(d, fv.tan) * rc.force.tangential_mag;
          rc.s = std::clamp(0.5 + (rep.solution(m.tau) - tau_mid) / (fv.L * rc.force.normal_mag),
                            fv.s_lo, fv.s_hi);
        }
      }
      sol.robot_contacts[r][t] = rc;
      if (rc.active) {
        const auto& fv = faces[r][rc.face];
        const Eigen::Vector2d p = fv.a + rc.s * fv.edge;
        prev[r].in_contact = true;
        prev[r].face = rc.face;
        prev[r].s = rc.s;
        prev[r].position = p - cp.robot_radius * fv.nu;
        prev[r].has_position = true;
        prev[r].free_steps = 0;
      } else {
        prev[r].in_contact = false;
        if (prev[r].has_position) prev[r].free_steps++;
      }
    }
    for (std::size_t e = 0; e < cands.size(); ++e) {
      const int en = cand_base + 3 * static_cast<int>(e);
      const double n_mag = rep.solution(en);
      const double t_mag = rep.solution(en + 1);
      sol.extrinsic_forces[cands[e].idx][t] = {n_mag, t_mag};
      sol.extrinsic_active[cands[e].idx][t] =
          (rep.solution(en + 2) > 0.5 && n_mag + std::abs(t_mag) > 1e-9) ? 1 : 0;
    }
  }
  out.value = std::move(sol);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 3
// ---------------------------------------------------------------------------

namespace {

Demonstration assemble_demo(const TaskSpec& task, const PhysicalParams& params,
                            const Stage2Solution& sol, const CitoParams& cp) {
  const int T = task.horizon;
  const int n_rob = task.n_robots;
  const int n_cand = static_cast<int>(sol.extrinsic_forces.size());
  Demonstration demo;
  demo.params = params;
  demo.dt = task.dt;
  demo.feasibility = FeasibilityLevel::dynamic;
  demo.object_traj = sol.object_traj;
  demo.robot_traj.assign(n_rob, std::vector<Eigen::Vector2d>(T + 1, Eigen::Vector2d::Zero()));
  demo.robot_forces.assign(n_rob, std::vector<ContactForce>(T + 1));
  demo.extrinsic_forces = sol.extrinsic_forces;
  demo.extrinsic_locations.assign(n_cand, std::vector<Demonstration::MaybePoint>(T + 1));

  const int n_surf = surface_count(task.scene);
  for (int t = 0; t <= T; ++t) {
    const auto corners = box_corners(sol.object_traj[t], params.geometry);
    for (int e = 0; e < n_cand; ++e) {
      if (sol.extrinsic_active[e][t]) {
        demo.extrinsic_locations[e][t].present = true;
        demo.extrinsic_locations[e][t].location = corners[e / n_surf];
      } else {
        demo.extrinsic_forces[e][t] = {};
      }
    }
  }
  for (int r = 0; r < n_rob; ++r) {
    int first_contact = -1;
    Eigen::Vector2d last = Eigen::Vector2d::Zero();
    bool have_last = false;
    for (int t = 0; t <= T; ++t) {
      const auto& rc = sol.robot_contacts[r][t];
      if (rc.active) {
        const auto [a, b] = face_segment_world(sol.object_traj[t], params.geometry, rc.face);
        const Eigen::Vector2d nu = face_inward_normal_world(sol.object_traj[t], rc.face);
        last = a + rc.s * (b - a) - cp.robot_radius * nu;
        have_last = true;
        if (first_contact < 0) first_contact = t;
        demo.robot_forces[r][t] = rc.force;
      }
      if (have_last) demo.robot_traj[r][t] = last;
    }
    if (first_contact > 0) {
      for (int t = 0; t < first_contact; ++t)
        demo.robot_traj[r][t] = demo.robot_traj[r][first_contact];
    } else if (first_contact < 0) {
      // Never in contact: hover above the moving box top face.
      for (int t = 0; t <= T; ++t) {
        const auto [a, b] = face_segment_world(sol.object_traj[t], params.geometry, 1);
        const Eigen::Vector2d nu = face_inward_normal_world(sol.object_traj[t], 1);
        demo.robot_traj[r][t] = 0.5 * (a + b) - (cp.robot_radius + 0.02) * nu;
      }
    }
  }
  return demo;
}

}  // namespace

Feasible<Demonstration> stage3_refine(const TaskSpec& task, const PhysicalParams& params,
                                      const Stage2Solution& stage2, const CitoParams& cp) {
  Feasible<Demonstration> out;
  const int T = task.horizon;
  const int n_rob = task.n_robots;
  const int n_surf = surface_count(task.scene);
  const double mg = params.mass * task.scene.gravity;
  Stage2Solution sol = stage2;  // refined in place

  for (int t = 0; t <= T; ++t) {
    const PlanarPose& pose = sol.object_traj[t];
    const Eigen::Vector2d c(pose.y, pose.z);
    const auto corners = box_corners(pose, params.geometry);
    const auto corners_next = box_corners(sol.object_traj[std::min(t + 1, T)], params.geometry);

    std::vector<int> act_cands;
    for (std::size_t e = 0; e < sol.extrinsic_active.size(); ++e)
      if (sol.extrinsic_active[e][t]) act_cands.push_back(static_cast<int>(e));
    std::vector<int> act_robots;
    for (int r = 0; r < n_rob; ++r)
      if (sol.robot_contacts[r][t].active) act_robots.push_back(r);

    const double mu_r = params.mu_pair_robot();
    bool needs_nlp = false;
    for (int r : act_robots) {
      const auto& rc = sol.robot_contacts[r][t];
      double slip = 0.0;
      if (t > 0) {
        const auto& pc = sol.robot_contacts[r][t - 1];
        if (pc.active && pc.face == rc.face)
          slip = (rc.s - pc.s) * face_length(params.geometry, rc.face) / task.dt;
      }
      const double margin = mu_r * rc.force.normal_mag - std::abs(rc.force.tangential_mag);
      if (margin * std::abs(slip) > 1e-7 || rc.force.tangential_mag * slip > 1e-9)
        needs_nlp = true;
    }
    if (!needs_nlp) continue;  // stage-2 balance is exact by construction

    const int nrv = static_cast<int>(act_robots.size());
    const int nev = static_cast<int>(act_cands.size());
    const int n = 3 * nrv + 2 * nev;
    Eigen::VectorXd x0(n), lo(n), hi(n);
    struct RobGeom {
      Eigen::Vector2d a, nu, tan, edge;
      double L = 0;
      double s_prev = 0.5;
      bool has_prev = false;
    };
    std::vector<RobGeom> rg(nrv);
    for (int i = 0; i < nrv; ++i) {
      const int r = act_robots[i];
      const auto& rc = sol.robot_contacts[r][t];
      x0.segment<3>(3 * i) << rc.s, rc.force.normal_mag, rc.force.tangential_mag;
      lo.segment<3>(3 * i) << 0.0, 0.0, -cp.robot_force_max;
      hi.segment<3>(3 * i) << 1.0, cp.robot_force_max, cp.robot_force_max;
      RobGeom g;
      const auto [a, b] = face_segment_world(pose, params.geometry, rc.face);
      g.a = a;
      g.nu = face_inward_normal_world(pose, rc.face);
      g.tan = {g.nu(1), -g.nu(0)};
      g.edge = b - a;
      g.L = face_length(params.geometry, rc.face);
      if (t > 0) {
        const auto& pc = sol.robot_contacts[r][t - 1];
        if (pc.active && pc.face == rc.face) {
          g.has_prev = true;
          g.s_prev = pc.s;
          const double ds = cp.v_max_robot * 0.8 / g.L;
          lo(3 * i) = std::max(0.0, g.s_prev - ds);
          hi(3 * i) = std::min(1.0, g.s_prev + ds);
          x0(3 * i) = std::clamp(x0(3 * i), lo(3 * i), hi(3 * i));
        }
      }
      rg[i] = g;
    }
    struct CandGeom {
      Eigen::Vector2d loc, nu, tan;
      double mu = 0, v_tan = 0;
    };
    std::vector<CandGeom> cg(nev);
    for (int j = 0; j < nev; ++j) {
      const int e = act_cands[j];
      const int corner = e / n_surf;
      const Surface s = static_cast<Surface>(e % n_surf);
      CandGeom g;
      g.loc = corners[corner];
      g.nu = surface_normal(s, task.scene);
      g.tan = surface_tangent(s, task.scene);
      g.mu = pair_mu(params, s);
      const Eigen::Vector2d vel =
          t < T ? ((corners_next[corner] - corners[corner]) / task.dt).eval()
                : Eigen::Vector2d::Zero().eval();
      g.v_tan = g.tan.dot(vel);
      cg[j] = g;
      x0.segment<2>(3 * nrv + 2 * j) << sol.extrinsic_forces[e][t].normal_mag,
          sol.extrinsic_forces[e][t].tangential_mag;
      const double n_cap = (!task.scene.wall_present && s == Surface::wall)
                               ? 0.8 * task.scene.lip_capacity
                               : cp.env_force_max;
      lo.segment<2>(3 * nrv + 2 * j) << 0.0, -cp.env_force_max;
      hi.segment<2>(3 * nrv + 2 * j) << n_cap, cp.env_force_max;
    }

    auto balance = [&, nrv, nev](const Eigen::VectorXd& x) {
      Eigen::Vector3d bal(0.0, -mg, 0.0);
      for (int i = 0; i < nrv; ++i) {
        const double s = x(3 * i), fn = x(3 * i + 1), ft = x(3 * i + 2);
        const Eigen::Vector2d F = fn * rg[i].nu + ft * rg[i].tan;
        const Eigen::Vector2d p = rg[i].a + s * rg[i].edge;
        bal(0) += F(0);
        bal(1) += F(1);
        bal(2) += cross2(p - c, F);
      }
      for (int j = 0; j < nev; ++j) {
        const double en = x(3 * nrv + 2 * j), et = x(3 * nrv + 2 * j + 1);
        const Eigen::Vector2d F = en * cg[j].nu + et * cg[j].tan;
        bal(0) += F(0);
        bal(1) += F(1);
        bal(2) += cross2(cg[j].loc - c, F);
      }
      return bal;
    };

    const Eigen::VectorXd x_ref = x0;
    int n_slide = 0;
    for (int j = 0; j < nev; ++j)
      if (std::abs(cg[j].v_tan) > cp.slip_tol) ++n_slide;

    bool solved = false;
    Eigen::VectorXd x_sol = x0;
    Eigen::VectorXd x_start = x0;
    for (double eps : cp.eps_schedule) {
      opt::NonlinearProgram nlp;
      nlp.cost = [x_ref](const Eigen::VectorXd& x) { return (x - x_ref).squaredNorm(); };
      nlp.cost_grad = [x_ref](const Eigen::VectorXd& x) {
        return (2.0 * (x - x_ref)).eval();
      };
      nlp.eq = [&, nrv, nev, n_slide](const Eigen::VectorXd& x) {
        Eigen::VectorXd v(3 + n_slide);
        v.head<3>() = balance(x) / mg;
        int w = 3;
        for (int j = 0; j < nev; ++j)
          if (std::abs(cg[j].v_tan) > cp.slip_tol)
            v(w++) = (x(3 * nrv + 2 * j + 1) +
                      (cg[j].v_tan > 0 ? 1.0 : -1.0) * cg[j].mu * x(3 * nrv + 2 * j)) /
                     mg;
        return v;
      };
      nlp.ineq = [&, nrv, nev, eps](const Eigen::VectorXd& x) {
        Eigen::VectorXd v(4 * nrv + nev);
        int w = 0;
        for (int i = 0; i < nrv; ++i) {
          const double s = x(3 * i), fn = x(3 * i + 1), ft = x(3 * i + 2);
          const double margin = mu_r * fn - std::abs(ft);
          const double slip = rg[i].has_prev ? (s - rg[i].s_prev) * rg[i].L / task.dt : 0.0;
          v(w++) = margin;
          v(w++) = eps - margin * slip;
          v(w++) = eps + margin * slip;
          v(w++) = ft * slip + 1e-12;  // reaction force follows the robot's relative slip
        }
        for (int j = 0; j < nev; ++j) {
          const double en = x(3 * nrv + 2 * j), et = x(3 * nrv + 2 * j + 1);
          v(w++) = cg[j].mu * en - std::abs(et);
        }
        return v;
      };
      nlp.x0 = x_start;
      nlp.lower = lo;
      nlp.upper = hi;
      opt::NlpOptions opts;
      opts.tol = 1e-8;
      opts.max_outer = 30;
      opts.max_inner = 200;
      const auto rep = opt::solve_nlp(nlp, opts);
      if (rep.ok() && rep.max_violation <= 1e-7) {
        x_start = rep.solution;
        x_sol = rep.solution;
        solved = true;
      } else {
        solved = false;
        break;
      }
    }
    if (!solved) {
      out.diagnostic = "stage3 infeasible at step " + std::to_string(t);
      return out;
    }
    for (int i = 0; i < nrv; ++i) {
      auto& rc = sol.robot_contacts[act_robots[i]][t];
      rc.s = x_sol(3 * i);
      rc.force.normal_mag = x_sol(3 * i + 1);
      rc.force.tangential_mag = x_sol(3 * i + 2);
    }
    for (int j = 0; j < nev; ++j) {
      auto& f = sol.extrinsic_forces[act_cands[j]][t];
      f.normal_mag = x_sol(3 * nrv + 2 * j);
      f.tangential_mag = x_sol(3 * nrv + 2 * j + 1);
    }
  }

  out.value = assemble_demo(task, params, sol, cp);
  return out;
}

// ---------------------------------------------------------------------------
// Kinematic variant, full pipeline, dataset generation
// ---------------------------------------------------------------------------

namespace {

// Stage-2 variant with all force constraints removed: the robot rides a fixed
// face of the box (chosen for whole-trajectory reachability) so kinematic
// demos still provide a meaningful robot reference path.
Feasible<Demonstration> kinematic_robot_path(const TaskSpec& task, const PhysicalParams& params,
                                             const Stage1Result& stage1, const CitoParams& cp) {
  Feasible<Demonstration> out;
  const int T = task.horizon;

  int chosen = -1;
  double best_height = -1e9;
  for (int f = 0; f < 4; ++f) {
    bool ok = true;
    for (int t = 0; t <= T && ok; ++t)
      ok = face_placement_window(stage1.object_traj[t], params.geometry, f, task.scene,
                                 cp.robot_radius)
               .usable;
    if (!ok) continue;
    const auto [a, b] = face_segment_world(stage1.object_traj[0], params.geometry, f);
    const double h = 0.5 * (a(1) + b(1));
    if (h > best_height + 1e-12) {
      best_height = h;
      chosen = f;
    }
  }
  if (chosen < 0) {
    out.diagnostic = "no face reachable across the whole trajectory";
    return out;
  }

  Demonstration demo;
  demo.params = params;
  demo.dt = task.dt;
  demo.feasibility = FeasibilityLevel::kinematic;
  demo.object_traj = stage1.object_traj;
  demo.robot_traj.assign(task.n_robots,
                         std::vector<Eigen::Vector2d>(T + 1, Eigen::Vector2d::Zero()));
  for (int t = 0; t <= T; ++t) {
    const auto w = face_placement_window(stage1.object_traj[t], params.geometry, chosen,
                                         task.scene, cp.robot_radius);
    const double s = std::clamp(0.5, w.s_lo, w.s_hi);
    const auto [a, b] = face_segment_world(stage1.object_traj[t], params.geometry, chosen);
    const Eigen::Vector2d nu = face_inward_normal_world(stage1.object_traj[t], chosen);
    for (int r = 0; r < task.n_robots; ++r)
      demo.robot_traj[r][t] = a + s * (b - a) - cp.robot_radius * nu;
  }
  out.value = std::move(demo);
  return out;
}

}  // namespace

Feasible<Demonstration> generate_demo(const TaskSpec& task, const PhysicalParams& params,
                                      FeasibilityLevel mode, const CitoParams& cp) {
  Feasible<Demonstration> out;
  auto s1 = stage1_kinematic(task, params, cp);
  if (!s1.ok()) {
    out.diagnostic = s1.diagnostic;
    return out;
  }
  if (mode == FeasibilityLevel::kinematic)
    return kinematic_robot_path(task, params, *s1.value, cp);

  auto s2 = stage2_contact_milp(task, params, *s1.value, cp);
  if (!s2.ok()) {
    out.diagnostic = s2.diagnostic;
    return out;
  }
  auto s3 = stage3_refine(task, params, *s2.value, cp);
  if (!s3.ok()) {
    out.diagnostic = s3.diagnostic;
    return out;
  }
  const auto check = check_demonstration(*s3.value, task, cp);
  if (!check.dynamic_ok(params.mass * task.scene.gravity)) {
    out.diagnostic = "residual gate failed: " + check.detail;
    return out;
  }
  return s3;
}

DemoDataset generate_dataset(const TaskSpec& task, int n, const ParamRanges& ranges,
                             FeasibilityLevel mode, std::uint64_t seed, const CitoParams& cp,
                             const DatasetGenOptions& opts) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  DemoDataset ds;
  ds.task = task;
  ds.mode = mode;
  ds.seed = seed;

  Rng master(seed);
  std::deque<bool> window;
  long draw = 0;
  const int workers = std::max(1, opts.workers);

  while (static_cast<int>(ds.records.size()) < n) {
    const int block = std::max(workers, std::min(8, n));
    std::vector<Feasible<Demonstration>> results(block);
    std::vector<PhysicalParams> block_params(block);
    for (int i = 0; i < block; ++i) {
      Rng child = master.child(static_cast<std::uint64_t>(draw + i));
      block_params[i] = ranges.sample(child);
    }
    auto run_one = [&](int i) {
      // Start/goal poses depend on the sampled geometry.
      TaskSpec drawn = make_pivot_task(task.kind, block_params[i].geometry, task.horizon, task.dt);
      drawn.n_robots = task.n_robots;
      results[i] = generate_demo(drawn, block_params[i], mode, cp);
    };
    if (workers == 1) {
      for (int i = 0; i < block; ++i) run_one(i);
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (int i = next.fetch_add(1); i < block; i = next.fetch_add(1)) run_one(i);
        });
      for (auto& th : pool) th.join();
    }
    for (int i = 0; i < block && static_cast<int>(ds.records.size()) < n; ++i) {
      if (results[i].ok()) {
        ds.records.push_back(std::move(*results[i].value));
        window.push_back(false);
      } else {
        ++ds.rejection_count;
        window.push_back(true);
      }
      while (window.size() > static_cast<std::size_t>(opts.reject_window)) window.pop_front();
      if (window.size() >= static_cast<std::size_t>(opts.reject_window)) {
        const long rejected = std::count(window.begin(), window.end(), true);
        if (static_cast<double>(rejected) / static_cast<double>(window.size()) >
            opts.reject_abort_rate)
          throw NumericalError("generate_dataset: rejection rate above " +
                               std::to_string(opts.reject_abort_rate) + " over the last " +
                               std::to_string(window.size()) + " draws");
      }
    }
    draw += block;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Independent residual evaluation
// ---------------------------------------------------------------------------

CheckReport check_demonstration(const Demonstration& demo, const TaskSpec& task,
                                const CitoParams& cp) {
  CheckReport rep;
  const int T = demo.horizon();
  const int n_surf = surface_count(task.scene);
  const double mg = demo.params.mass * task.scene.gravity;
  const BoxGeometry& geom = demo.params.geometry;
  rep.cone_margin_min = 1e9;

  rep.final_orientation_error =
      orientation_error(demo.object_traj.back().theta, task.goal_pose.theta);

  rep.kinematic_ok = true;
  for (int t = 0; t <= T; ++t) {
    const auto corners = box_corners(demo.object_traj[t], geom);
    for (int k = 0; k < 4; ++k) {
      double pen = std::max(0.0, task.scene.table_z - corners[k](1));
      if (n_surf > 1) pen = std::max(pen, penetration_depth(corners[k], Surface::wall, task.scene));
      rep.penetration = std::max(rep.penetration, pen);
    }
    if (t < T) {
      const Eigen::Vector3d d = demo.object_traj[t + 1].vec() - demo.object_traj[t].vec();
      for (int j = 0; j < 3; ++j) {
        const double dj = j == 2 ? wrap_angle(d(2)) : d(j);
        if (std::abs(dj) > cp.vel_bound(j) + 1e-7) rep.kinematic_ok = false;
      }
    }
  }
  if (rep.penetration > 1e-6) rep.kinematic_ok = false;

  if (!demo.has_forces()) {
    rep.cone_margin_min = 0.0;
    if (!rep.kinematic_ok) rep.detail = "kinematic constraints violated";
    return rep;
  }

  for (int t = 0; t <= T; ++t) {
    const PlanarPose& pose = demo.object_traj[t];
    const Eigen::Vector2d c(pose.y, pose.z);
    const auto corners = box_corners(pose, geom);
    const auto corners_next = box_corners(demo.object_traj[std::min(t + 1, T)], geom);
    Eigen::Vector2d fsum(0.0, -mg);
    double msum = 0.0;

    for (std::size_t e = 0; e < demo.extrinsic_forces.size(); ++e) {
      const ContactForce& f = demo.extrinsic_forces[e][t];
      if (f.magnitude() < 1e-9) continue;
      const int corner = static_cast<int>(e) / n_surf;
      const Surface surf = static_cast<Surface>(static_cast<int>(e) % n_surf);
      const Eigen::Vector2d nu = surface_normal(surf, task.scene);
      const Eigen::Vector2d tan = surface_tangent(surf, task.scene);
      const Eigen::Vector2d loc = demo.extrinsic_locations[e][t].present
                                      ? demo.extrinsic_locations[e][t].location
                                      : corners[corner];
      const Eigen::Vector2d F = force_world(f, nu);
      fsum += F;
      msum += cross2(loc - c, F);
      rep.contact_distance =
          std::max(rep.contact_distance, std::abs(signed_distance(loc, surf, task.scene)));
      const double mu = pair_mu(demo.params, surf);
      rep.cone_margin_min = std::min(rep.cone_margin_min, in_friction_cone(f, mu).margin);
      const Eigen::Vector2d vel =
          t < T ? ((corners_next[corner] - corners[corner]) / demo.dt).eval()
                : Eigen::Vector2d::Zero().eval();
      const double v_tan = tan.dot(vel);
      if (std::abs(v_tan) > cp.slip_tol) {
        const double margin = mu * f.normal_mag - std::abs(f.tangential_mag);
        rep.complementarity = std::max(rep.complementarity, std::abs(margin * v_tan));
        rep.complementarity =
            std::max(rep.complementarity, std::max(0.0, f.tangential_mag * v_tan));
      }
    }

    for (std::size_t r = 0; r < demo.robot_forces.size(); ++r) {
      const ContactForce& f = demo.robot_forces[r][t];
      if (f.magnitude() < 1e-9) continue;
      const Eigen::Vector2d rp = demo.robot_traj[r][t];
      int best_face = -1;
      double best_err = 1e9;
      double best_s = 0.5;
      for (int face = 0; face < 4; ++face) {
        const auto [a, b] = face_segment_world(pose, geom, face);
        const Eigen::Vector2d nu = face_inward_normal_world(pose, face);
        const Eigen::Vector2d d = b - a;
        const double s = std::clamp(d.dot(rp - a) / d.squaredNorm(), 0.0, 1.0);
        const Eigen::Vector2d p = a + s * d;
        // Robot center should sit radius outside the face along -nu.
        const double err = (rp - (p - cp.robot_radius * nu)).norm();
        if (err < best_err) {
          best_err = err;
          best_face = face;
          best_s = s;
        }
      }
      rep.contact_distance = std::max(rep.contact_distance, best_err);
      const Eigen::Vector2d nu = face_inward_normal_world(pose, best_face);
      const auto [a, b] = face_segment_world(pose, geom, best_face);
      const Eigen::Vector2d p = a + best_s * (b - a);
      const Eigen::Vector2d F = force_world(f, nu);
      fsum += F;
      msum += cross2(p - c, F);
      const double mu = demo.params.mu_pair_robot();
      rep.cone_margin_min = std::min(rep.cone_margin_min, in_friction_cone(f, mu).margin);
      if (t > 0 && demo.robot_forces[r][t - 1].magnitude() > 1e-9) {
        const auto [a0, b0] = face_segment_world(demo.object_traj[t - 1], geom, best_face);
        const Eigen::Vector2d d0 = b0 - a0;
        const double s0 =
            std::clamp(d0.dot(demo.robot_traj[r][t - 1] - a0) / d0.squaredNorm(), 0.0, 1.0);
        const double slip = (best_s - s0) * face_length(geom, best_face) / demo.dt;
        if (std::abs(slip) > cp.slip_tol) {
          const double margin = mu * f.normal_mag - std::abs(f.tangential_mag);
          rep.complementarity = std::max(rep.complementarity, std::abs(margin * slip));
          // The force on the object follows the robot's relative slip.
          rep.complementarity =
              std::max(rep.complementarity, std::max(0.0, -f.tangential_mag * slip));
        }
      }
    }

    rep.force_residual = std::max(rep.force_residual, fsum.lpNorm<Eigen::Infinity>() / mg);
    rep.moment_residual = std::max(rep.moment_residual, std::abs(msum) / (mg * geom.half_len));
  }
  if (rep.cone_margin_min > 1e8) rep.cone_margin_min = 0.0;

  if (!rep.dynamic_ok(mg)) {
    rep.detail = "force=" + std::to_string(rep.force_residual) +
                 " moment=" + std::to_string(rep.moment_residual) +
                 " cone=" + std::to_string(rep.cone_margin_min) +
                 " compl=" + std::to_string(rep.complementarity) +
                 " dist=" + std::to_string(rep.contact_distance) +
                 " pen=" + std::to_string(rep.penetration) +
                 " kin_ok=" + std::to_string(rep.kinematic_ok);
  }
  return rep;
}

}  // namespace pk::cito
