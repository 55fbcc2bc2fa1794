#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pivotkit/cito.hpp"
#include "pivotkit/rng.hpp"
#include "pivotkit/scene.hpp"

namespace pk::sim {

using cito::DemoDataset;
using cito::Demonstration;
using cito::TaskSpec;
using scene::BoxGeometry;
using scene::ContactOwner;
using scene::ExtrinsicContactSignal;
using scene::PhysicalParams;
using scene::PlanarPose;
using scene::SceneConfig;

/// Simulator rates, limits and contact-solver parameters.
struct SimConfig {
  double dt_control = 0.1;  // policy rate 10 Hz
  int n_substeps = 5;       // quasistatic substeps per control step
  double a_max = 0.01;      // action clip per component (m)
  double contact_margin = 0.02;
  double robot_radius = 0.005;
  double robot_virtual_mass = 0.05;
  double cmd_offset_max = 0.015;  // stiffness-controller position saturation
  double robot_force_cap = 20.0;  // stiffness-controller force saturation (N)
  double kp_default = 5000.0;
  // Quasistatic drag: bounds the creep rate under unbalanced forces without
  // affecting equilibria or contact force distribution at rest.
  double lin_damping = 10.0;   // N s/m
  double rot_damping = 0.05;   // N m s
  double expulsion_factor = 0.2;     // fraction of penetration removed per substep
  double expulsion_rate_cap = 0.1;   // m/s
  int slip_fixed_point_iters = 4;    // compensation fixed-point passes per substep
  int max_episode_steps = 300;
  double success_theta_tol = 0.087;
  double robot_contact_force_threshold = 0.05;  // d_t binary
  double out_of_plane_penalty = -100.0;
};

/// Dynamics randomization and sensor noise. Ranges follow the training
/// randomization table; the three enable flags allow the no-DR ablation
/// (dynamics collapsed to nominal, noise off) while keeping episode variety.
struct DomainRandomizationConfig {
  cito::ParamRanges params;
  double kp_lo = 2000.0, kp_hi = 8000.0;
  double init_object_y = 0.015;   // +U(-x, x), clamped into the wall
  double init_robot = 0.015;      // +U(-x, x) per component
  double noise_object_pos = 0.015;
  double noise_robot_pos = 0.00075;
  double noise_force = 0.2;
  double noise_angle_sigma_deg = 2.0;
  double noise_angle_max_deg = 5.0;

  bool randomize_dynamics = true;
  bool sensor_noise = true;
  bool randomize_init = true;
  // Used when randomize_dynamics is false (directed experiments); falls back
  // to nominal defaults when absent.
  std::optional<PhysicalParams> fixed_params;

  static DomainRandomizationConfig no_dr() {
    DomainRandomizationConfig dr;
    dr.randomize_dynamics = false;
    dr.sensor_noise = false;
    return dr;
  }
};

/// Fixed per-field normalization constants: value_norm = (value - offset) / scale.
struct NormalizationConfig {
  double pos_y_offset = 0.22, pos_y_scale = 0.15;
  double pos_z_offset = 0.12, pos_z_scale = 0.15;
  double theta_scale = M_PI / 2;
  double mass_offset = 0.22, mass_scale = 0.18;
  double half_len_offset = 0.08, half_len_scale = 0.02;
  double half_wid_offset = 0.04, half_wid_scale = 0.01;
  double mu_env_offset = 0.205, mu_env_scale = 0.195;
  double mu_obj_offset = 0.45, mu_obj_scale = 0.25;
  double mu_robot_offset = 1.2, mu_robot_scale = 0.5;
  double force_scale = 10.0;

  Eigen::VectorXd normalize_pose(const PlanarPose& p) const;
  Eigen::VectorXd normalize_params(const PhysicalParams& p) const;
  PhysicalParams denormalize_params(const Eigen::VectorXd& v) const;
  PlanarPose denormalize_pose(const Eigen::VectorXd& v) const;
};

/// Observation split into the privileged vector p_t = [pose(3), v(7), b(N_e)]
/// and the sensor vector o_t = [robot positions, d_t, robot forces], all
/// normalized per NormalizationConfig.
struct Observation {
  Eigen::VectorXd privileged;
  Eigen::VectorXd sensor;

  static int privileged_dim(int n_extrinsic) { return 3 + 7 + n_extrinsic; }
  static int sensor_dim(int n_robots) { return 2 * n_robots + 1 + 2 * n_robots; }
  Eigen::VectorXd concat() const;
};

/// Per-robot relative displacement command, clipped to [-a_max, a_max].
struct Action {
  std::vector<Eigen::Vector2d> delta;  // one per robot

  static Action zero(int n_robots) { return {std::vector<Eigen::Vector2d>(
      static_cast<std::size_t>(n_robots), Eigen::Vector2d::Zero())}; }
  Eigen::VectorXd flat() const;
  static Action from_flat(const Eigen::VectorXd& v);
};

enum class Termination : int { running = 0, success = 1, out_of_plane_fail = 2, timeout = 3 };

/// Tangential speed of each persistent contact at the previous substep,
/// used to cancel the convex relaxation's slide-separation coupling.
struct SlipMemory {
  std::vector<std::pair<ContactOwner, double>> entries;

  double lookup(const ContactOwner& owner) const {
    for (const auto& [o, v] : entries)
      if (o == owner) return v;
    return 0.0;
  }
};

struct StepInfo {
  PlanarPose true_pose;
  ExtrinsicContactSignal true_contacts;
  std::vector<Eigen::Vector2d> robot_force_world;  // force on the object, per robot
  std::vector<Eigen::Vector2d> robot_actual;
  double orientation_error = 0.0;
  bool out_of_plane = false;
};

struct StepOutcome {
  Observation observation;
  Termination termination = Termination::running;
  StepInfo info;
};

struct EnvState {
  PlanarPose object;
  std::vector<Eigen::Vector2d> robot_actual;
  std::vector<Eigen::Vector2d> robot_command;   // integrated action target
  // The robot keeps its velocity between substeps (the object does not):
  // the stiffness-controlled end effector is a damped spring-mass tracking
  // the command, while the object is quasistatic.
  std::vector<Eigen::Vector2d> robot_velocity;
  PhysicalParams params;
  SceneConfig scene;
  double kp = 5000.0;
  double kd = 0.0;
  int step_count = 0;
  Action last_action;
  Rng rng{0};
  bool terminated = false;
  bool lip_broken = false;  // virtual lip popped this episode
  SlipMemory slip_memory;
};

/// One convex quasistatic contact solve at the velocity level.
struct QuasistaticResult {
  Eigen::Vector3d object_velocity = Eigen::Vector3d::Zero();  // (vy, vz, omega)
  std::vector<Eigen::Vector2d> robot_velocity;
  struct ContactSolution {
    ContactOwner owner;
    Eigen::Vector2d point = Eigen::Vector2d::Zero();
    Eigen::Vector2d force_on_object = Eigen::Vector2d::Zero();  // world, N
    double normal_mag = 0.0;
    double tangential_mag = 0.0;  // in the contact frame t = (n.z, -n.y)
    double gap = 0.0;
    double slip_rate = 0.0;  // tangential relative velocity (m/s)
  };
  std::vector<ContactSolution> contacts;
  SlipMemory converged_slip;
  bool ok = false;
  std::string diagnostic;
};

/// Solves the Anitescu-style convex relaxation for one substep of length h:
/// quasi-dynamic bodies (velocities do not persist), implicit command spring,
/// non-penetration at the velocity level with phi/h stabilization, friction
/// cones. Exposed standalone so tests can compare against a mode-enumeration
/// oracle on single configurations.
QuasistaticResult solve_quasistatic(const EnvState& state,
                                    const std::vector<Eigen::Vector2d>& cmd_eff, double h,
                                    const SimConfig& sc);

struct RasterSpec {
  int width = 64, height = 48;
  double y_min = -0.05, y_max = 0.43;
  double z_min = -0.06, z_max = 0.30;
};

/// Binary occupancy of the object rectangle on a fixed window; cell = 1 iff
/// its center is inside. Row 0 is the top of the window (image convention).
std::vector<std::uint8_t> rasterize_mask(const PlanarPose& pose, const BoxGeometry& geom,
                                         const RasterSpec& spec);

/// Episode environment around the quasistatic solver. Single-threaded; run
/// one instance per concurrent worker.
class Env {
 public:
  Env(const TaskSpec& task, const SimConfig& sc, const DomainRandomizationConfig& dr,
      const NormalizationConfig& norm);

  /// Demonstration source for demo-conditioned episodes: reset() then draws
  /// one record and adopts its params so reward lookups match the episode.
  void bind_demos(const DemoDataset* demos);

  struct ResetResult {
    Observation observation;
    const Demonstration* demo = nullptr;  // the episode's record, if bound
  };
  ResetResult reset(std::uint64_t seed);

  StepOutcome step(const Action& action);

  const EnvState& state() const { return state_; }
  const TaskSpec& task() const { return task_; }
  const NormalizationConfig& normalization() const { return norm_; }
  const SimConfig& sim_config() const { return sc_; }
  int n_extrinsic() const;

  /// Noise-free ground-truth observation of the current state.
  Observation observe_clean() const;

 private:
  Observation observe(bool with_noise);

  TaskSpec task_;
  SimConfig sc_;
  DomainRandomizationConfig dr_;
  NormalizationConfig norm_;
  const DemoDataset* demos_ = nullptr;
  EnvState state_;
  std::vector<Eigen::Vector2d> last_robot_force_;
  std::vector<Eigen::Vector2d> prev_command_;
};

}  // namespace pk::sim
