#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

#include "pivotkit/errors.hpp"

namespace pk::scene {

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// SE(2) pose of the object in the world y-z plane. theta is kept wrapped
/// to (-pi, pi] by the constructor; code that integrates poses re-wraps.
struct PlanarPose {
  double y = 0.0;
  double z = 0.0;
  double theta = 0.0;

  PlanarPose() = default;
  PlanarPose(double y_, double z_, double theta_) : y(y_), z(z_), theta(wrap_angle(theta_)) {}

  Eigen::Vector3d vec() const { return {y, z, theta}; }
};

/// Axis-aligned half extents of the box in its local frame.
/// half_len is along local y (the long side), half_wid along local z.
struct BoxGeometry {
  double half_len = 0.08;
  double half_wid = 0.04;

  bool valid() const { return half_len > 0.0 && half_wid > 0.0; }
};

/// Privileged physical parameters of one episode/demonstration.
struct PhysicalParams {
  double mass = 0.11;  // kg
  BoxGeometry geometry;
  double mu_table = 0.2;
  double mu_wall = 0.2;
  double mu_object = 0.45;
  double mu_robot = 1.2;

  bool valid() const {
    return mass > 0.0 && geometry.valid() && mu_table >= 0.0 && mu_wall >= 0.0 &&
           mu_object >= 0.0 && mu_robot >= 0.0;
  }

  /// Effective pair friction between the object and a contacting body,
  /// combined as the geometric mean of the two material coefficients.
  double mu_pair_table() const { return std::sqrt(mu_table * mu_object); }
  double mu_pair_wall() const { return std::sqrt(mu_wall * mu_object); }
  double mu_pair_robot() const { return std::sqrt(mu_robot * mu_object); }
};

/// Static environment: a table plane at table_z and an optional wall plane
/// at wall_y. The without-wall task keeps wall_present = false and models
/// the high-friction tabletop with a 1 mm virtual wall instead.
struct SceneConfig {
  bool wall_present = true;
  double wall_y = 0.30;
  double wall_height = 0.30;
  double table_z = 0.0;
  double gravity = 9.81;
  double virtual_wall_height = 0.0;
  // Lateral capture window of the virtual wall: it is a thin lip, so a point
  // that has tipped more than this far past the plane is beyond it, not
  // inside it. A real wall is an impassable plane and ignores this.
  double wall_capture = 0.005;
  // The virtual lip resists like a bevel: its contact normal is tilted by
  // this angle from -y toward +z, so its holding capacity scales with how
  // hard the corner is pressed down. A real wall has a plain -y normal.
  double virtual_wall_bevel = M_PI / 4;
  // A 1 mm lip can only take a small load before the box rides over it.
  // Exceeding this normal force breaks the lip for the rest of the episode.
  double lip_capacity = 2.5;

  /// True when there is any wall surface to interact with (real or virtual).
  bool has_wall_surface() const { return wall_present || virtual_wall_height > 0.0; }
  double effective_wall_height() const {
    return wall_present ? wall_height : virtual_wall_height;
  }
};

enum class Surface : int { table = 0, wall = 1 };

/// Number of environment surfaces that generate contact candidates.
inline int surface_count(const SceneConfig& scene) { return scene.has_wall_surface() ? 2 : 1; }

struct ContactOwner {
  enum class Kind : int { corner_surface, robot_face };
  Kind kind = Kind::corner_surface;
  int index = 0;  // corner index or robot index
  int other = 0;  // surface id or face id

  bool operator==(const ContactOwner&) const = default;
};

struct ContactPoint {
  Eigen::Vector2d location = Eigen::Vector2d::Zero();  // world (y, z)
  Eigen::Vector2d normal = Eigen::Vector2d::Zero();    // unit, into the object
  ContactOwner owner;
};

/// Planar contact force expressed in the contact frame: normal_mag along the
/// surface normal (into the object), tangential_mag signed along the surface
/// tangent t = (n.z, -n.y).
struct ContactForce {
  double normal_mag = 0.0;
  double tangential_mag = 0.0;

  double magnitude() const {
    return std::sqrt(normal_mag * normal_mag + tangential_mag * tangential_mag);
  }
};

/// Binary extrinsic contact signal, one flag per (object face x surface)
/// candidate pair, laid out as index = face * surface_count + surface.
struct ExtrinsicContactSignal {
  std::vector<std::uint8_t> flags;

  int size() const { return static_cast<int>(flags.size()); }
  bool operator==(const ExtrinsicContactSignal&) const = default;
};

// Face convention: 0 = +local y (right at theta = 0), 1 = +local z (top),
// 2 = -local y (left), 3 = -local z (bottom). box_corners order: CCW from
// local (+half_len, +half_wid), so face f spans corners face_corners(f).
inline std::array<int, 2> face_corners(int face) {
  switch (face) {
    case 0: return {3, 0};
    case 1: return {0, 1};
    case 2: return {1, 2};
    default: return {2, 3};
  }
}

/// Outward face normal in the object's local frame.
Eigen::Vector2d face_normal_local(int face);

/// World-frame corners in fixed CCW order starting from local (+half_len, +half_wid).
std::array<Eigen::Vector2d, 4> box_corners(const PlanarPose& pose, const BoxGeometry& geom);

/// Unit normal of a surface, pointing into the object side of the halfspace.
/// The virtual lip's normal is beveled (see SceneConfig::virtual_wall_bevel).
Eigen::Vector2d surface_normal(Surface s, const SceneConfig& scene);

/// Surface tangent: the normal rotated by -90 deg, t = (n.z, -n.y).
Eigen::Vector2d surface_tangent(Surface s, const SceneConfig& scene);

/// Signed plane distance: positive outside material, negative in penetration.
/// For the virtual lip this is the distance to the bevel plane through the
/// table-lip junction. Wall height limits are handled by contact detection.
/// Throws ConfigError when the wall is queried but the scene has no wall surface.
double signed_distance(const Eigen::Vector2d& point, Surface s, const SceneConfig& scene);

/// Penetration depth of a point into a surface (0 when outside material).
/// The wall counts only within its height band; the virtual wall additionally
/// only within the lateral capture window (lip semantics).
double penetration_depth(const Eigen::Vector2d& point, Surface s, const SceneConfig& scene);

/// True when a point may touch the wall surface: inside the height band and,
/// for a virtual wall, within the capture window of the plane.
bool wall_band_contains(const Eigen::Vector2d& point, const SceneConfig& scene, double tol);

struct ContactQueryResult {
  std::vector<ContactPoint> contacts;
  ExtrinsicContactSignal signal;
};

/// Detects corner-surface contacts within |distance| <= tol. A corner touches
/// the wall only if it also lies within the wall's height band. The signal has
/// one flag per (face x surface), set iff >= 1 corner of that face touches.
ContactQueryResult detect_contacts(const PlanarPose& pose, const BoxGeometry& geom,
                                   const SceneConfig& scene, double tol);

struct ConeCheck {
  bool inside = false;
  double margin = 0.0;  // mu * normal - |tangential|, in N
};

/// Coulomb cone membership check, planar exact cone |t| <= mu * n, n >= 0.
ConeCheck in_friction_cone(const ContactForce& force, double mu);

/// Angular deviation between two planar orientations, in [0, pi].
/// Equals arccos((trace(R_rel) - 1) / 2) for the relative rotation embedded in 3D.
double orientation_error(double theta, double theta_goal);

}  // namespace pk::scene
