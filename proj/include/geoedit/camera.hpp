#pragma once

#include <array>
#include <numbers>

#include <Eigen/Core>
#include <json.hpp>

namespace geoedit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pitch is kept this far away from the poles, where the look-at frame
/// collapses (view axis parallel to world up).
inline constexpr double kPitchGuard = 1e-4;
inline constexpr double kMaxPitch = std::numbers::pi / 2 - kPitchGuard;

/// Reduces an angle into (-pi, pi].
double wrap_angle(double a);

/// Look-at view parameterized by azimuth, elevation, distance to the
/// origin and a post-projection NDC shift.
///
/// Yaw is the azimuth about +Y (zero along +X, increasing toward +Z),
/// pitch the elevation above the XZ plane. All invariants are checked in
/// make(); a constructed value is always valid.
class EulerCamera {
 public:
  EulerCamera() = default;

  /// Throws DegeneratePitch when |pitch| exceeds kMaxPitch and BadParams
  /// for d <= 0, |r| > 1 or non-finite input. Yaw is wrapped.
  static EulerCamera make(double yaw, double pitch, double d, double rx = 0.0,
                          double ry = 0.0);
  /// Like make() but clamps pitch into the guard band and r into [-1, 1].
  static EulerCamera make_clamped(double yaw, double pitch, double d,
                                  double rx = 0.0, double ry = 0.0);
  static EulerCamera from_array(const std::array<double, 5>& s);

  double yaw() const { return yaw_; }
  double pitch() const { return pitch_; }
  double distance() const { return d_; }
  double rx() const { return rx_; }
  double ry() const { return ry_; }

  /// (yaw, pitch, d, r_x, r_y)
  std::array<double, 5> to_array() const { return {yaw_, pitch_, d_, rx_, ry_}; }

  bool operator==(const EulerCamera&) const = default;

 private:
  double yaw_ = 0.0;
  double pitch_ = 0.0;
  double d_ = 1.0;
  double rx_ = 0.0;
  double ry_ = 0.0;
};

/// World-to-camera map x_c = R x_w + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& x) const { return R * x + t; }
  RigidTransform inverse() const { return {R.transpose(), -R.transpose() * t}; }
};

/// Relative-pose descriptor: axis-angle of the relative rotation, relative
/// translation and the NDC shift deltas, flattened in that order.
struct RelPoseDescriptor {
  Vec3 aa = Vec3::Zero();
  Vec3 t_rel = Vec3::Zero();
  double dr_x = 0.0;
  double dr_y = 0.0;

  static constexpr std::size_t kSize = 8;

  std::array<double, kSize> flatten() const;
  static RelPoseDescriptor from_array(const std::array<double, kSize>& f);

  /// True when both NDC deltas lie in [-1, 1].
  bool in_frame() const;
};

Vec3 camera_position(const EulerCamera& cam);

RigidTransform look_at_extrinsics(const EulerCamera& cam);
/// Unvalidated entry point; throws DegeneratePitch outside the guard band.
RigidTransform look_at_extrinsics(double yaw, double pitch, double d);

/// Transform taking source-camera coordinates to target-camera
/// coordinates: R_rel = R_tgt R_src^T, t_rel = t_tgt - R_rel t_src.
RigidTransform relative_transform(const RigidTransform& src,
                                  const RigidTransform& tgt);

Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

/// Matrix logarithm on SO(3) returned as an axis-angle vector with norm in
/// [0, pi]. Throws NotARotation when R is not orthonormal to 1e-6 or has
/// negative determinant.
Vec3 so3_log(const Mat3& R);
/// Rodrigues exponential.
Mat3 so3_exp(const Vec3& v);

RelPoseDescriptor build_descriptor(const EulerCamera& src, const EulerCamera& tgt);

/// Fixed NDC shift used to push the object out of frame.
inline constexpr double kOutOfFrameShiftX = 2.0;
inline constexpr double kOutOfFrameShiftY = 0.0;
RelPoseDescriptor build_outofframe_descriptor(const EulerCamera& src);

/// Pinhole projection with unit focal length followed by the NDC shift.
/// Throws BehindCamera when the camera-space depth is <= 1e-9.
Vec2 project_point(const Vec3& x_world, const EulerCamera& cam);

void to_json(nlohmann::json& j, const EulerCamera& cam);
void from_json(const nlohmann::json& j, EulerCamera& cam);

}  // namespace geoedit
