#include "pivotkit/scene.hpp"

#include <cmath>

namespace pk::scene {

double wrap_angle(double a) {
  // Wrap to (-pi, pi]. fmod lands in (-2pi, 2pi); fold once from each side.
  double w = std::fmod(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  if (w > M_PI) w -= 2.0 * M_PI;
  return w;
}

Eigen::Vector2d face_normal_local(int face) {
  switch (face) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    case 3: return {0.0, -1.0};
    default: throw ConfigError("face index out of range");
  }
}

std::array<Eigen::Vector2d, 4> box_corners(const PlanarPose& pose, const BoxGeometry& geom) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  const double l = geom.half_len;
  const double w = geom.half_wid;
  const std::array<Eigen::Vector2d, 4> local = {
      Eigen::Vector2d(l, w), Eigen::Vector2d(-l, w), Eigen::Vector2d(-l, -w),
      Eigen::Vector2d(l, -w)};
  std::array<Eigen::Vector2d, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {pose.y + c * local[i].x() - s * local[i].y(),
              pose.z + s * local[i].x() + c * local[i].y()};
  }
  return out;
}

Eigen::Vector2d surface_normal(Surface s, const SceneConfig& scene) {
  // Table pushes up; the wall sits on the +y side and pushes -y. The virtual
  // lip pushes along its bevel.
  if (s == Surface::table) return {0.0, 1.0};
  if (scene.wall_present) return {-1.0, 0.0};
  return {-std::cos(scene.virtual_wall_bevel), std::sin(scene.virtual_wall_bevel)};
}

Eigen::Vector2d surface_tangent(Surface s, const SceneConfig& scene) {
  const Eigen::Vector2d n = surface_normal(s, scene);
  return {n.y(), -n.x()};
}

double signed_distance(const Eigen::Vector2d& point, Surface s, const SceneConfig& scene) {
  if (s == Surface::table) return point(1) - scene.table_z;
  if (!scene.has_wall_surface())
    throw ConfigError("signed_distance: wall queried but scene has no wall surface");
  if (scene.wall_present) return scene.wall_y - point(0);
  const Eigen::Vector2d junction(scene.wall_y, scene.table_z);
  return surface_normal(s, scene).dot(point - junction);
}

bool wall_band_contains(const Eigen::Vector2d& point, const SceneConfig& scene, double tol) {
  if (!scene.has_wall_surface()) return false;
  if (point(1) < scene.table_z - tol ||
      point(1) > scene.table_z + scene.effective_wall_height() + tol)
    return false;
  if (!scene.wall_present) {
    // Virtual wall: only a thin lip around the plane interacts.
    if (scene.wall_y - point(0) < -(scene.wall_capture + tol)) return false;
  }
  return true;
}

double penetration_depth(const Eigen::Vector2d& point, Surface s, const SceneConfig& scene) {
  if (s == Surface::table) return std::max(0.0, scene.table_z - point(1));
  if (!scene.has_wall_surface()) return 0.0;
  if (!wall_band_contains(point, scene, 0.0)) return 0.0;
  return std::max(0.0, point(0) - scene.wall_y);
}

ContactQueryResult detect_contacts(const PlanarPose& pose, const BoxGeometry& geom,
                                   const SceneConfig& scene, double tol) {
  if (tol < 0.0) throw ConfigError("detect_contacts: tol must be >= 0");
  const auto corners = box_corners(pose, geom);
  const int n_surf = surface_count(scene);

  ContactQueryResult result;
  result.signal.flags.assign(static_cast<std::size_t>(4 * n_surf), 0);

  std::array<std::array<bool, 2>, 4> corner_touch{};  // [corner][surface]
  for (int i = 0; i < 4; ++i) {
    if (std::abs(corners[i](1) - scene.table_z) <= tol) {
      corner_touch[i][static_cast<int>(Surface::table)] = true;
      ContactPoint cp;
      cp.location = corners[i];
      cp.normal = surface_normal(Surface::table, scene);
      cp.owner = {ContactOwner::Kind::corner_surface, i, static_cast<int>(Surface::table)};
      result.contacts.push_back(cp);
    }
    if (n_surf > 1) {
      if (wall_band_contains(corners[i], scene, tol) &&
          std::abs(corners[i](0) - scene.wall_y) <= tol) {
        corner_touch[i][static_cast<int>(Surface::wall)] = true;
        ContactPoint cp;
        cp.location = corners[i];
        cp.normal = surface_normal(Surface::wall, scene);
        cp.owner = {ContactOwner::Kind::corner_surface, i, static_cast<int>(Surface::wall)};
        result.contacts.push_back(cp);
      }
    }
  }

  for (int f = 0; f < 4; ++f) {
    const auto fc = face_corners(f);
    for (int s = 0; s < n_surf; ++s) {
      if (corner_touch[fc[0]][s] || corner_touch[fc[1]][s])
        result.signal.flags[static_cast<std::size_t>(f * n_surf + s)] = 1;
    }
  }
  return result;
}

ConeCheck in_friction_cone(const ContactForce& force, double mu) {
  if (mu < 0.0) throw ConfigError("in_friction_cone: mu must be >= 0");
  const double margin = mu * force.normal_mag - std::abs(force.tangential_mag);
  return {force.normal_mag >= 0.0 && margin >= 0.0, margin};
}

double orientation_error(double theta, double theta_goal) {
  // |wrap(theta - goal)| coincides with the 3D-embedded trace formula
  // arccos((tr(R_rel) - 1)/2) and is better conditioned near zero.
  return std::abs(wrap_angle(theta - theta_goal));
}

}  // namespace pk::scene
