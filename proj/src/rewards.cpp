#include "pivotkit/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "pivotkit/errors.hpp"

namespace pk::rewards {

using namespace pk::scene;

double progress_reward(double theta, double theta_goal, const RewardCoefficients& c) {
  const double te = orientation_error(theta, theta_goal);
  return c.a1 * (M_PI / 2 - te) + c.a2 * te * te;
}

double success_reward(const PlanarPose& pose, const PlanarPose& goal,
                      const RewardCoefficients& c) {
  const double te = orientation_error(pose.theta, goal.theta);
  const double pe = std::hypot(pose.y - goal.y, pose.z - goal.z);
  return (te <= c.eps_theta && pe <= c.eps_pos) ? c.a3 : 0.0;
}

double smoothness_reward(const Eigen::VectorXd& a_prev, const Eigen::VectorXd& a_curr,
                         const RewardCoefficients& c) {
  return c.a4 * (a_prev - a_curr).squaredNorm();
}

int nearest_demo_index(const PlanarPose& q, const DemoLookup& lookup) {
  if (!lookup.bound()) throw ConfigError("nearest_demo_index: lookup not bound");
  const auto& traj = lookup.demo->object_traj;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const double d = std::hypot(q.y - traj[t].y, q.z - traj[t].z) +
                     lookup.w_theta * std::abs(wrap_angle(q.theta - traj[t].theta));
    if (d < best_d - 1e-15) {  // strict improvement keeps the lowest index on ties
      best_d = d;
      best = static_cast<int>(t);
    }
  }
  return best;
}

double kin_reward(const std::vector<Eigen::Vector2d>& robot_pos, const PlanarPose& object_pose,
                  const DemoLookup& lookup, const RewardCoefficients& c) {
  const int k = nearest_demo_index(object_pose, lookup);
  double sq = 0.0;
  for (std::size_t r = 0; r < robot_pos.size(); ++r)
    sq += (robot_pos[r] - lookup.demo->robot_traj[r][static_cast<std::size_t>(k)]).squaredNorm();
  return c.a5 * sq;
}

ExtrinsicContactSignal demo_contact_flags(const Demonstration& demo, int step,
                                          const SceneConfig& scene) {
  const int n_surf = surface_count(scene);
  ExtrinsicContactSignal sig;
  sig.flags.assign(static_cast<std::size_t>(4 * n_surf), 0);
  if (!demo.has_forces()) return sig;
  for (std::size_t e = 0; e < demo.extrinsic_forces.size(); ++e) {
    if (demo.extrinsic_forces[e][static_cast<std::size_t>(step)].magnitude() <= 1e-6) continue;
    const int corner = static_cast<int>(e) / n_surf;
    const int surf = static_cast<int>(e) % n_surf;
    for (int f = 0; f < 4; ++f) {
      const auto fc = face_corners(f);
      if (fc[0] == corner || fc[1] == corner)
        sig.flags[static_cast<std::size_t>(f * n_surf + surf)] = 1;
    }
  }
  return sig;
}

double dyn_reward(const std::vector<Eigen::Vector2d>& robot_pos,
                  const std::vector<Eigen::Vector2d>& measured_force_world,
                  const ExtrinsicContactSignal& b_t, const PlanarPose& object_pose,
                  const SceneConfig& scene, const DemoLookup& lookup,
                  const RewardCoefficients& c) {
  if (!lookup.bound() || !lookup.demo->has_forces())
    throw ConfigError("dyn_reward: lookup demo lacks force fields");
  const int k = nearest_demo_index(object_pose, lookup);

  double r = 0.0;
  for (std::size_t rb = 0; rb < robot_pos.size(); ++rb)
    r += c.a6 *
         (robot_pos[rb] - lookup.demo->robot_traj[rb][static_cast<std::size_t>(k)]).squaredNorm();

  // Force-direction term: world direction of the demo robot force at step k,
  // reconstructed from the stored contact frame at the demo pose.
  for (std::size_t rb = 0; rb < measured_force_world.size(); ++rb) {
    const ContactForce& df = lookup.demo->robot_forces[rb][static_cast<std::size_t>(k)];
    if (df.magnitude() < 0.01 || measured_force_world[rb].norm() < 0.01) continue;
    const PlanarPose& dpose = lookup.demo->object_traj[static_cast<std::size_t>(k)];
    const Eigen::Vector2d rp = lookup.demo->robot_traj[rb][static_cast<std::size_t>(k)];
    int best_face = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (int f = 0; f < 4; ++f) {
      const auto [a, b] = cito::face_segment_world(dpose, lookup.demo->params.geometry, f);
      const Eigen::Vector2d d = b - a;
      const double s = std::clamp(d.dot(rp - a) / d.squaredNorm(), 0.0, 1.0);
      const Eigen::Vector2d nu = cito::face_inward_normal_world(dpose, f);
      const double err = (rp - (a + s * d - 0.005 * nu)).norm();
      if (err < best_err) {
        best_err = err;
        best_face = f;
      }
    }
    const Eigen::Vector2d psi =
        cito::force_world(df, cito::face_inward_normal_world(dpose, best_face));
    const double cosang = std::clamp(
        measured_force_world[rb].dot(psi) / (measured_force_world[rb].norm() * psi.norm()), -1.0,
        1.0);
    r += c.a7 * std::acos(cosang);
  }

  const ExtrinsicContactSignal ref = demo_contact_flags(*lookup.demo, k, scene);
  int matches = 0;
  for (int i = 0; i < std::min(ref.size(), b_t.size()); ++i)
    if (ref.flags[static_cast<std::size_t>(i)] == b_t.flags[static_cast<std::size_t>(i)])
      ++matches;
  r += c.a8 * matches;
  return r;
}

double total_reward(RewardMode mode, const StepRewardInputs& in, const SceneConfig& scene,
                    const DemoLookup& lookup, const RewardCoefficients& c) {
  double r = progress_reward(in.pose.theta, in.goal.theta, c) +
             success_reward(in.pose, in.goal, c) +
             smoothness_reward(in.action_prev, in.action_curr, c);
  if (mode == RewardMode::kin) {
    r += kin_reward(in.robot_pos, in.pose, lookup, c);
  } else if (mode == RewardMode::dyn) {
    r += dyn_reward(in.robot_pos, in.robot_force_world, in.contacts, in.pose, scene, lookup, c);
  }
  if (in.out_of_plane) r += in.out_of_plane_penalty;
  return r;
}

}  // namespace pk::rewards
