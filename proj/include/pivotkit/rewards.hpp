#pragma once

#include <Eigen/Core>

#include "pivotkit/cito.hpp"
#include "pivotkit/sim.hpp"

namespace pk::rewards {

using cito::Demonstration;
using scene::ExtrinsicContactSignal;
using scene::PlanarPose;

/// Coefficients of the shaped reward. alpha1..3 and alpha8 positive, the
/// rest negative; defaults follow the training hyperparameter table.
struct RewardCoefficients {
  double a1 = 1.0;      // linear progress
  double a2 = 0.075;    // quadratic progress
  double a3 = 10.0;     // success indicator
  double a4 = -1.0;     // action smoothness
  double a5 = -50.0;    // kinematic imitation
  double a6 = -50.0;    // dynamic imitation (position)
  double a7 = -0.005;   // force-direction mismatch
  double a8 = 5.0;      // extrinsic contact match
  double eps_theta = 0.087;  // success gates
  double eps_pos = 0.02;

  bool valid() const {
    return a1 > 0 && a2 >= 0 && a3 > 0 && a8 > 0 && a4 < 0 && a5 < 0 && a6 < 0 && a7 < 0 &&
           eps_theta > 0 && eps_pos > 0;
  }
};

enum class RewardMode : int { vanilla = 0, kin = 1, dyn = 2 };

/// Binds the episode's demonstration for the phi/psi lookups. The referenced
/// demo must outlive the lookup and carry the episode's params.
struct DemoLookup {
  const Demonstration* demo = nullptr;
  double w_theta = 0.1;  // m per rad in the pose distance

  bool bound() const { return demo != nullptr; }
};

/// alpha1 (pi/2 - theta_e) + alpha2 theta_e^2.
double progress_reward(double theta, double theta_goal, const RewardCoefficients& c);

/// alpha3 when both the orientation and position errors are inside the goal set.
double success_reward(const PlanarPose& pose, const PlanarPose& goal,
                      const RewardCoefficients& c);

/// alpha4 ||a_prev - a_curr||^2 over the flattened per-robot actions.
double smoothness_reward(const Eigen::VectorXd& a_prev, const Eigen::VectorXd& a_curr,
                         const RewardCoefficients& c);

/// Argmin over demo steps of ||pos - pos_ref||_2 + w_theta |wrap(dtheta)|,
/// lowest index on ties.
int nearest_demo_index(const PlanarPose& object_pose, const DemoLookup& lookup);

/// alpha5 ||robot - demo robot at the nearest index||^2 (summed over robots).
double kin_reward(const std::vector<Eigen::Vector2d>& robot_pos, const PlanarPose& object_pose,
                  const DemoLookup& lookup, const RewardCoefficients& c);

/// Extrinsic contact flags of a demo step, in the (face x surface) layout of
/// the observation signal: flag = 1 iff any adjacent corner carries force.
ExtrinsicContactSignal demo_contact_flags(const Demonstration& demo, int step,
                                          const scene::SceneConfig& scene);

/// alpha6 position term + alpha7 arccos(force cosine, clamped; skipped below
/// 0.01 N) + alpha8 (number of matching extrinsic contact flags).
double dyn_reward(const std::vector<Eigen::Vector2d>& robot_pos,
                  const std::vector<Eigen::Vector2d>& measured_force_world,
                  const ExtrinsicContactSignal& b_t, const PlanarPose& object_pose,
                  const scene::SceneConfig& scene, const DemoLookup& lookup,
                  const RewardCoefficients& c);

/// Everything a reward evaluation needs from one transition.
struct StepRewardInputs {
  PlanarPose pose;
  PlanarPose goal;
  Eigen::VectorXd action_prev;
  Eigen::VectorXd action_curr;
  std::vector<Eigen::Vector2d> robot_pos;
  std::vector<Eigen::Vector2d> robot_force_world;
  ExtrinsicContactSignal contacts;
  bool out_of_plane = false;
  double out_of_plane_penalty = -100.0;
};

double total_reward(RewardMode mode, const StepRewardInputs& in, const scene::SceneConfig& scene,
                    const DemoLookup& lookup, const RewardCoefficients& c);

}  // namespace pk::rewards
