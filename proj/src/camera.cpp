#include "geoedit/camera.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "geoedit/errors.hpp"

namespace geoedit {

namespace {

constexpr double kPi = std::numbers::pi;
const Vec3 kWorldUp(0.0, 1.0, 0.0);

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw BadParams(std::string(name) + " is not finite");
}

}  // namespace

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

EulerCamera EulerCamera::make(double yaw, double pitch, double d, double rx,
                              double ry) {
  check_finite(yaw, "yaw");
  check_finite(pitch, "pitch");
  check_finite(d, "d");
  check_finite(rx, "rx");
  check_finite(ry, "ry");
  if (std::abs(pitch) > kMaxPitch)
    throw DegeneratePitch("|pitch| = " + std::to_string(std::abs(pitch)) +
                          " exceeds pi/2 - 1e-4");
  if (d <= 0.0) throw BadParams("distance must be positive");
  if (std::abs(rx) > 1.0 || std::abs(ry) > 1.0)
    throw BadParams("NDC shift outside [-1, 1]");
  EulerCamera cam;
  cam.yaw_ = wrap_angle(yaw);
  cam.pitch_ = pitch;
  cam.d_ = d;
  cam.rx_ = rx;
  cam.ry_ = ry;
  return cam;
}

EulerCamera EulerCamera::make_clamped(double yaw, double pitch, double d,
                                      double rx, double ry) {
  return make(yaw, std::clamp(pitch, -kMaxPitch, kMaxPitch), d,
              std::clamp(rx, -1.0, 1.0), std::clamp(ry, -1.0, 1.0));
}

EulerCamera EulerCamera::from_array(const std::array<double, 5>& s) {
  return make(s[0], s[1], s[2], s[3], s[4]);
}

std::array<double, RelPoseDescriptor::kSize> RelPoseDescriptor::flatten() const {
  return {aa.x(), aa.y(), aa.z(), t_rel.x(), t_rel.y(), t_rel.z(), dr_x, dr_y};
}

RelPoseDescriptor RelPoseDescriptor::from_array(const std::array<double, kSize>& f) {
  RelPoseDescriptor d;
  d.aa = Vec3(f[0], f[1], f[2]);
  d.t_rel = Vec3(f[3], f[4], f[5]);
  d.dr_x = f[6];
  d.dr_y = f[7];
  return d;
}

bool RelPoseDescriptor::in_frame() const {
  return std::abs(dr_x) <= 1.0 && std::abs(dr_y) <= 1.0;
}

Vec3 camera_position(const EulerCamera& cam) {
  const double d = cam.distance();
  const double cp = std::cos(cam.pitch());
  return {d * cp * std::cos(cam.yaw()), d * std::sin(cam.pitch()),
          d * cp * std::sin(cam.yaw())};
}

RigidTransform look_at_extrinsics(double yaw, double pitch, double d) {
  if (!(std::abs(pitch) <= kMaxPitch))
    throw DegeneratePitch("look-at frame undefined for pitch " +
                          std::to_string(pitch));
  return look_at_extrinsics(EulerCamera::make(yaw, pitch, d));
}

RigidTransform look_at_extrinsics(const EulerCamera& cam) {
  const Vec3 pos = camera_position(cam);
  // Forward (+z) points from the camera toward the origin.
  const Vec3 z = -pos / pos.norm();
  const Vec3 x = kWorldUp.cross(z).normalized();
  const Vec3 y = z.cross(x);
  RigidTransform T;
  T.R.row(0) = x.transpose();
  T.R.row(1) = y.transpose();
  T.R.row(2) = z.transpose();
  T.t = -T.R * pos;
  return T;
}

RigidTransform relative_transform(const RigidTransform& src,
                                  const RigidTransform& tgt) {
  RigidTransform rel;
  rel.R = tgt.R * src.R.transpose();
  rel.t = tgt.t - rel.R * src.t;
  return rel;
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Vec3 so3_log(const Mat3& R) {
  if (!R.allFinite()) throw NotARotation("non-finite entries");
  const double ortho_err =
      (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-6)
    throw NotARotation("orthonormality error " + std::to_string(ortho_err));
  if (R.determinant() <= 0.0) throw NotARotation("determinant is not positive");

  // w = sin(theta) * axis
  const Vec3 w = 0.5 * vee(R - R.transpose());
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double s = w.norm();
  const double theta = std::atan2(s, c);

  if (theta < 1e-6) {
    // theta / sin(theta) = 1 + theta^2 / 6 + O(theta^4)
    return w * (1.0 + theta * theta / 6.0);
  }
  if (c < -0.5) {
    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part (R + R^T)/2 - cI = (1 - c) a a^T via its dominant column.
    const Mat3 B = 0.5 * (R + R.transpose()) - c * Mat3::Identity();
    Eigen::Index k = 0;
    B.diagonal().maxCoeff(&k);
    Vec3 axis = B.col(k).normalized();
    if (axis.dot(w) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / s) * w;
}

Mat3 so3_exp(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 K = hat(v);
  if (theta < 1e-8) return Mat3::Identity() + K + 0.5 * K * K;
  return Mat3::Identity() + (std::sin(theta) / theta) * K +
         ((1.0 - std::cos(theta)) / (theta * theta)) * K * K;
}

RelPoseDescriptor build_descriptor(const EulerCamera& src, const EulerCamera& tgt) {
  const RigidTransform es = look_at_extrinsics(src), et = look_at_extrinsics(tgt);
  RelPoseDescriptor f;
  if (src.yaw() == tgt.yaw() && src.pitch() == tgt.pitch()) {
    // Shared orientation: R_rel is the identity, so skip the round-off of
    // R_tgt R_src^T and keep the rotation block exactly zero.
    f.aa = Vec3::Zero();
    f.t_rel = et.t - es.t;
  } else {
    const RigidTransform rel = relative_transform(es, et);
    f.aa = so3_log(rel.R);
    f.t_rel = rel.t;
  }
  f.dr_x = tgt.rx() - src.rx();
  f.dr_y = tgt.ry() - src.ry();
  return f;
}

RelPoseDescriptor build_outofframe_descriptor(const EulerCamera& /*src*/) {
  RelPoseDescriptor f;
  f.dr_x = kOutOfFrameShiftX;
  f.dr_y = kOutOfFrameShiftY;
  return f;
}

Vec2 project_point(const Vec3& x_world, const EulerCamera& cam) {
  const Vec3 xc = look_at_extrinsics(cam).apply(x_world);
  if (!(xc.z() > 1e-9)) throw BehindCamera("depth " + std::to_string(xc.z()));
  return {xc.x() / xc.z() + cam.rx(), xc.y() / xc.z() + cam.ry()};
}

void to_json(nlohmann::json& j, const EulerCamera& cam) {
  j = nlohmann::json{{"yaw", cam.yaw()},
                     {"pitch", cam.pitch()},
                     {"d", cam.distance()},
                     {"rx", cam.rx()},
                     {"ry", cam.ry()}};
}

void from_json(const nlohmann::json& j, EulerCamera& cam) {
  for (const auto& [key, _] : j.items()) {
    if (key != "yaw" && key != "pitch" && key != "d" && key != "rx" && key != "ry")
      throw BadParams("unknown camera key '" + key + "'");
  }
  cam = EulerCamera::make(j.at("yaw").get<double>(), j.at("pitch").get<double>(),
                          j.at("d").get<double>(), j.value("rx", 0.0),
                          j.value("ry", 0.0));
}

}  // namespace geoedit
