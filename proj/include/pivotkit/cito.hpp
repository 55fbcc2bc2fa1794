#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pivotkit/rng.hpp"
#include "pivotkit/scene.hpp"

namespace pk::cito {

using scene::BoxGeometry;
using scene::ContactForce;
using scene::PhysicalParams;
using scene::PlanarPose;
using scene::SceneConfig;

enum class TaskKind : int { with_wall = 0, without_wall = 1 };
enum class FeasibilityLevel : int { kinematic = 0, dynamic = 1 };

/// One pivoting task: start/goal object poses in a scene, horizon and rate.
struct TaskSpec {
  TaskKind kind = TaskKind::with_wall;
  PlanarPose start_pose;
  PlanarPose goal_pose;
  SceneConfig scene;
  int horizon = 60;  // T: trajectory has T+1 knots
  double dt = 0.1;
  int n_robots = 1;

  bool valid() const { return horizon >= 2 && dt > 0.0 && n_robots >= 1; }
};

/// Canonical pivot task for a given box: the box starts flat on the table
/// with its +y face flush against the wall plane and pivots to theta = -pi/2
/// (standing on the +y face). The without-wall variant replaces the wall with
/// the 1 mm virtual lip; its final footprint lies past the lip.
TaskSpec make_pivot_task(TaskKind kind, const BoxGeometry& geom, int horizon = -1,
                         double dt = 0.1);

/// Number of extrinsic contact candidates: 4 corners x active surfaces.
int num_extrinsic_candidates(const SceneConfig& scene);

/// Candidate index layout: corner * surface_count + surface.
inline int candidate_index(int corner, int surface, int n_surfaces) {
  return corner * n_surfaces + surface;
}

/// Tunables of the demonstration generator. Defaults are the repo values;
/// tolerances come from the Demonstration invariants.
struct CitoParams {
  Eigen::Vector3d q_weight = {1.0, 1.0, 0.1};     // tracking weight (y, z, theta)
  Eigen::Vector3d vel_bound = {0.02, 0.02, 0.06}; // per-step pose change bounds
  double v_max_robot = 0.05;                      // robot travel per step (m)
  double robot_radius = 0.005;
  double contact_tol = 1e-4;      // candidate activation distance
  double slip_tol = 1e-4;         // |corner velocity| below this counts as sticking (m/s)
  double robot_force_max = 30.0;  // N, big-M scale for robot contact
  double env_force_max = 60.0;    // N, big-M scale for extrinsic contact
  double balance_tol = 1e-7;      // stage-2 linear balance tolerance
  std::vector<double> eps_schedule = {1e-2, 1e-3, 1e-4, 1e-6};
  long bnb_node_budget = 100000;
};

/// One demonstration. Dynamic demos carry robot and extrinsic contact forces
/// satisfying quasistatic balance at every step; kinematic demos carry only
/// the trajectories (force fields absent).
struct Demonstration {
  PhysicalParams params;
  std::vector<PlanarPose> object_traj;                       // T+1
  std::vector<std::vector<Eigen::Vector2d>> robot_traj;      // [n_robots][T+1]
  std::vector<std::vector<ContactForce>> robot_forces;       // [n_robots][T+1] (dynamic only)
  std::vector<std::vector<ContactForce>> extrinsic_forces;   // [N_e][T+1] (dynamic only)
  struct MaybePoint {
    bool present = false;
    Eigen::Vector2d location = Eigen::Vector2d::Zero();
  };
  std::vector<std::vector<MaybePoint>> extrinsic_locations;  // [N_e][T+1] (dynamic only)
  FeasibilityLevel feasibility = FeasibilityLevel::kinematic;
  double dt = 0.1;

  int horizon() const { return static_cast<int>(object_traj.size()) - 1; }
  bool has_forces() const { return feasibility == FeasibilityLevel::dynamic; }
};

struct DemoDataset {
  TaskSpec task;
  FeasibilityLevel mode = FeasibilityLevel::dynamic;
  std::vector<Demonstration> records;
  std::uint64_t seed = 0;
  long rejection_count = 0;
};

/// Outcome wrapper: a value or an infeasibility diagnostic.
template <typename T>
struct Feasible {
  std::optional<T> value;
  std::string diagnostic;
  bool ok() const { return value.has_value(); }
};

struct Stage1Result {
  std::vector<PlanarPose> object_traj;  // T+1 including endpoints
  // Active extrinsic candidate indices per step (|signed distance| <= tol).
  std::vector<std::vector<int>> candidates;
};

/// Per-robot, per-step contact assignment of the stage-2/3 solution.
struct RobotContact {
  bool active = false;
  int face = -1;
  double s = 0.5;  // parameter along the face, 0 at face_corners()[0]
  ContactForce force;
};

struct Stage2Solution {
  std::vector<PlanarPose> object_traj;
  std::vector<std::vector<RobotContact>> robot_contacts;     // [n_robots][T+1]
  std::vector<std::vector<ContactForce>> extrinsic_forces;   // [N_e][T+1]
  std::vector<std::vector<std::uint8_t>> extrinsic_active;   // [N_e][T+1]
};

/// Stage 1: kinematically feasible object trajectory tracking the linear
/// interpolation reference, subject to velocity bounds and non-penetration.
Feasible<Stage1Result> stage1_kinematic(const TaskSpec& task, const PhysicalParams& params,
                                        const CitoParams& cp = {});

/// Stage 2: per-step contact MILPs over the fixed stage-1 object trajectory.
/// Contact making/breaking via big-M binaries; linearized quasistatic force
/// and moment balance; polyhedral friction cones; robot continuity window.
Feasible<Stage2Solution> stage2_contact_milp(const TaskSpec& task, const PhysicalParams& params,
                                             const Stage1Result& stage1,
                                             const CitoParams& cp = {});

/// Stage 3: local refinement to the exact nonlinear balance with
/// sticking-sliding complementarity, relaxation eps solved in sequence.
Feasible<Demonstration> stage3_refine(const TaskSpec& task, const PhysicalParams& params,
                                      const Stage2Solution& stage2, const CitoParams& cp = {});

/// Full pipeline for one parameter draw.
Feasible<Demonstration> generate_demo(const TaskSpec& task, const PhysicalParams& params,
                                      FeasibilityLevel mode, const CitoParams& cp = {});

/// Parameter randomization ranges used for demonstration generation and
/// simulator episodes (the dynamics half; sensor noise lives with the sim).
struct ParamRanges {
  double mass_lo = 0.04, mass_hi = 0.4;
  double mu_env_lo = 0.01, mu_env_hi = 0.4;    // table and wall
  double mu_obj_lo = 0.2, mu_obj_hi = 0.7;
  double mu_robot_lo = 0.7, mu_robot_hi = 1.7;
  double size_scale_lo = 0.95, size_scale_hi = 1.05;
  BoxGeometry nominal_geom;

  PhysicalParams sample(Rng& rng) const;
};

struct DatasetGenOptions {
  int workers = 1;
  double reject_window = 100;     // rolling window for the rejection guard
  double reject_abort_rate = 0.95;
};

/// Draws parameters, generates demos, rejects infeasible draws. Deterministic
/// for a given seed regardless of worker count (per-draw child RNG streams,
/// results merged in draw order).
DemoDataset generate_dataset(const TaskSpec& task, int n, const ParamRanges& ranges,
                             FeasibilityLevel mode, std::uint64_t seed,
                             const CitoParams& cp = {}, const DatasetGenOptions& opts = {});

/// Independent residual evaluation of a demonstration: direct arithmetic over
/// the stored trajectories, no solver machinery. Used by tests, dataset
/// generation (final gate) and the acceptance suite.
struct CheckReport {
  double force_residual = 0.0;          // max |sum F| / (m g)
  double moment_residual = 0.0;         // max |sum tau| / (m g half_len)
  double cone_margin_min = 0.0;         // min over all stored forces (N)
  double complementarity = 0.0;         // max cone_margin * |slip| (N m/s)
  double contact_distance = 0.0;        // max |sdf| at contacts with force
  double penetration = 0.0;             // max corner penetration (m)
  double final_orientation_error = 0.0; // |theta_T - goal|
  bool kinematic_ok = false;            // stage-1 constraints re-checked
  std::string detail;

  bool dynamic_ok(double mg) const {
    (void)mg;
    return force_residual <= 1e-4 && moment_residual <= 1e-4 && cone_margin_min >= -1e-6 &&
           complementarity <= 1e-6 && contact_distance <= 1e-4 && penetration <= 1e-6 &&
           kinematic_ok;
  }
};

CheckReport check_demonstration(const Demonstration& demo, const TaskSpec& task,
                                const CitoParams& cp = {});

/// Face/contact frame helpers shared with the simulator and rewards.
/// Into-object normal of a face contact (world frame).
Eigen::Vector2d face_inward_normal_world(const PlanarPose& pose, int face);
/// World endpoints of a face (order follows face_corners()).
std::pair<Eigen::Vector2d, Eigen::Vector2d> face_segment_world(const PlanarPose& pose,
                                                               const BoxGeometry& geom, int face);
/// World contact force vector from a contact-frame force given the
/// into-object normal.
Eigen::Vector2d force_world(const ContactForce& f, const Eigen::Vector2d& into_normal);

}  // namespace pk::cito
