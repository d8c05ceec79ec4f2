#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "geoedit/camera.hpp"
#include "geoedit/errors.hpp"

using namespace geoedit;
using std::numbers::pi;

namespace {

EulerCamera random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> yaw(-pi, pi), pitch(-1.5, 1.5),
      d(0.5, 10.0), r(-1.0, 1.0);
  return EulerCamera::make(yaw(rng), pitch(rng), d(rng), r(rng), r(rng));
}

Mat3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(n(rng), n(rng), n(rng));
  axis.normalize();
  return Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
}

// Camera axes in closed form from the spherical parameterization:
// forward = -position / d, right = normalize(up x forward), down-up = forward x right.
Mat3 closed_form_axes(double yaw, double pitch) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  Mat3 R;
  R << -sy, 0.0, cy,
       -sp * cy, cp, -sp * sy,
       -cp * cy, -sp, -cp * sy;
  return R;
}

// Independent log map through a unit quaternion (Shepperd's method).
Vec3 log_via_quaternion(const Mat3& R) {
  double w, x, y, z;
  const double tr = R.trace();
  if (tr > R(0, 0) && tr > R(1, 1) && tr > R(2, 2)) {
    const double s = std::sqrt(1.0 + tr) * 2.0;
    w = 0.25 * s;
    x = (R(2, 1) - R(1, 2)) / s;
    y = (R(0, 2) - R(2, 0)) / s;
    z = (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
    const double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2.0;
    w = (R(2, 1) - R(1, 2)) / s;
    x = 0.25 * s;
    y = (R(0, 1) + R(1, 0)) / s;
    z = (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) > R(2, 2)) {
    const double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2.0;
    w = (R(0, 2) - R(2, 0)) / s;
    x = (R(0, 1) + R(1, 0)) / s;
    y = 0.25 * s;
    z = (R(1, 2) + R(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2.0;
    w = (R(1, 0) - R(0, 1)) / s;
    x = (R(0, 2) + R(2, 0)) / s;
    y = (R(1, 2) + R(2, 1)) / s;
    z = 0.25 * s;
  }
  if (w < 0) { w = -w; x = -x; y = -y; z = -z; }
  const Vec3 v(x, y, z);
  const double n = v.norm();
  if (n == 0.0) return Vec3::Zero();
  return 2.0 * std::atan2(n, w) * v / n;
}

// Rodrigues by summing the exponential series in long double.
Mat3 exp_series(const Vec3& v) {
  using M = Eigen::Matrix<long double, 3, 3>;
  const M K = hat(v).cast<long double>();
  M term = M::Identity(), sum = M::Identity();
  for (int n = 1; n < 40; ++n) {
    term = term * K / static_cast<long double>(n);
    sum += term;
  }
  return sum.cast<double>();
}

}  // namespace

TEST_CASE("camera_position closed form") {
  CHECK((camera_position(EulerCamera::make(0, 0, 2)) - Vec3(2, 0, 0)).norm() < 1e-15);
  CHECK((camera_position(EulerCamera::make(pi / 2, 0, 1)) - Vec3(0, 0, 1)).norm() < 1e-15);
  const Vec3 top = camera_position(EulerCamera::make(0.7, kMaxPitch, 1));
  CHECK((top - Vec3(0, 1, 0)).norm() < 2e-4);
}

TEST_CASE("look_at_extrinsics maps the origin onto the optical axis") {
  const RigidTransform T = look_at_extrinsics(EulerCamera::make(0, 0, 2));
  CHECK((T.apply(Vec3::Zero()) - Vec3(0, 0, 2)).norm() < 1e-15);
  CHECK(T.t.norm() == doctest::Approx(2.0).epsilon(1e-12));

  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const EulerCamera cam = random_camera(rng);
    const RigidTransform E = look_at_extrinsics(cam);
    const Mat3 oracle = closed_form_axes(cam.yaw(), cam.pitch());
    CHECK((E.R - oracle).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((E.R * E.R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(E.R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(E.apply(Vec3::Zero()).z() > 0.0);
  }
}

TEST_CASE("look_at_extrinsics rejects pitch outside the guard band") {
  CHECK_THROWS_AS(look_at_extrinsics(0.0, pi / 2, 1.0), DegeneratePitch);
  CHECK_THROWS_AS(EulerCamera::make(0.0, -pi / 2, 1.0), DegeneratePitch);
  CHECK_NOTHROW(look_at_extrinsics(0.0, kMaxPitch, 1.0));
  CHECK_THROWS_AS(EulerCamera::make(0.0, 0.0, 0.0), BadParams);
  CHECK_THROWS_AS(EulerCamera::make(0.0, 0.0, 1.0, 1.5, 0.0), BadParams);
}

TEST_CASE("yaw wraps into (-pi, pi]") {
  CHECK(EulerCamera::make(-pi, 0, 1).yaw() == doctest::Approx(pi));
  CHECK(EulerCamera::make(3 * pi / 2, 0, 1).yaw() == doctest::Approx(-pi / 2));
  CHECK(wrap_angle(2 * pi + 0.25) == doctest::Approx(0.25));
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
}

TEST_CASE("relative_transform") {
  std::mt19937_64 rng(3);
  const RigidTransform A = look_at_extrinsics(random_camera(rng));
  const RigidTransform same = relative_transform(A, A);
  CHECK((same.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(same.t.norm() < 1e-12);

  const RigidTransform B = look_at_extrinsics(random_camera(rng));
  const RigidTransform from_id = relative_transform(RigidTransform::identity(), B);
  CHECK((from_id.R - B.R).norm() < 1e-15);
  CHECK((from_id.t - B.t).norm() < 1e-15);

  const RigidTransform rel = relative_transform(A, B);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    // Oracle: compose the two maps directly.
    const Vec3 via_src = B.R * (A.R.transpose() * (A.apply(x) - A.t)) + B.t;
    CHECK((rel.apply(A.apply(x)) - via_src).norm() < 1e-9);
    CHECK((rel.apply(A.apply(x)) - B.apply(x)).norm() < 1e-9);
  }
}

TEST_CASE("so3_log examples") {
  CHECK(so3_log(Mat3::Identity()).norm() == 0.0);
  const Mat3 Ry = Eigen::AngleAxisd(pi / 2, Vec3::UnitY()).toRotationMatrix();
  CHECK((so3_log(Ry) - Vec3(0, pi / 2, 0)).norm() < 1e-12);

  Mat3 bad = Mat3::Identity();
  bad(0, 1) = 1e-3;
  CHECK_THROWS_AS(so3_log(bad), NotARotation);
  CHECK_THROWS_AS(so3_log(-Mat3::Identity()), NotARotation);
}

TEST_CASE("so3_log near pi agrees with the quaternion path") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> gap(1e-6, 1e-2);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const Mat3 R = Eigen::AngleAxisd(pi - gap(rng), axis).toRotationMatrix();
    const Vec3 v = so3_log(R);
    CHECK((v - log_via_quaternion(R)).norm() < 1e-7);
    CHECK((so3_exp(v) - R).cwiseAbs().maxCoeff() < 1e-7);
  }
  // Exactly pi: either sign of the axis is a valid logarithm.
  const Mat3 half = Eigen::AngleAxisd(pi, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  CHECK(so3_log(half).norm() == doctest::Approx(pi).epsilon(1e-12));
  CHECK((so3_exp(so3_log(half)) - half).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("so3_exp examples and series oracle") {
  CHECK((so3_exp(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  const Mat3 half_y = so3_exp(Vec3(0, pi, 0));
  CHECK((half_y - Vec3(-1, 1, -1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() < 1e-15);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.8, 1.8);
  for (int i = 0; i < 200; ++i) {
    Vec3 v(u(rng), u(rng), u(rng));
    if (v.norm() > pi - 1e-3) v *= (pi - 1e-3) / v.norm();
    const Mat3 R = so3_exp(v);
    CHECK((R - exp_series(v)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((so3_log(R) - v).norm() < 1e-9);
  }
  CHECK((so3_log(so3_exp(Vec3(1e-9, -2e-9, 3e-9))) - Vec3(1e-9, -2e-9, 3e-9)).norm() < 1e-20);
}

TEST_CASE("exp(log(R)) round trip over random rotations") {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Mat3 R = random_rotation(rng, pi - 1e-3);
    worst = std::max(worst, (so3_exp(so3_log(R)) - R).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("build_descriptor examples") {
  const EulerCamera s = EulerCamera::make(0.3, 0.2, 2.5, 0.1, -0.1);
  for (double v : build_descriptor(s, s).flatten()) CHECK(v == 0.0);

  const EulerCamera a = EulerCamera::make(0.4, -0.1, 3.0, 0.0, 0.0);
  const EulerCamera b = EulerCamera::make(0.4, -0.1, 3.0, 0.5, 0.0);
  const auto f = build_descriptor(a, b).flatten();
  for (int i = 0; i < 6; ++i) CHECK(f[i] == 0.0);
  CHECK(f[6] == doctest::Approx(0.5));
  CHECK(f[7] == 0.0);

  // Yaw 0 -> pi/2 at d = 2. Oracle: closed-form axes composed by hand,
  // R_rel = [[0,0,1],[0,1,0],[-1,0,0]] (pi/2 about camera +Y),
  // t_src = t_tgt = (0,0,2), t_rel = (0,0,2) - R_rel (0,0,2) = (-2,0,2).
  const EulerCamera y0 = EulerCamera::make(0, 0, 2);
  const EulerCamera y90 = EulerCamera::make(pi / 2, 0, 2);
  const Mat3 R_rel = closed_form_axes(pi / 2, 0) * closed_form_axes(0, 0).transpose();
  Mat3 expected_R;
  expected_R << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  CHECK((R_rel - expected_R).cwiseAbs().maxCoeff() < 1e-15);
  const auto g = build_descriptor(y0, y90).flatten();
  const double frozen[8] = {0.0, pi / 2, 0.0, -2.0, 0.0, 2.0, 0.0, 0.0};
  for (int i = 0; i < 8; ++i) CHECK(g[i] == doctest::Approx(frozen[i]).epsilon(1e-12).scale(1.0));
}

TEST_CASE("out-of-frame descriptor is a fixed sentinel") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const RelPoseDescriptor f = build_outofframe_descriptor(random_camera(rng));
    const auto a = f.flatten();
    const double expected[8] = {0, 0, 0, 0, 0, 0, 2.0, 0.0};
    for (int k = 0; k < 8; ++k) CHECK(a[k] == expected[k]);
    CHECK_FALSE(f.in_frame());
  }
  // Any descriptor passing the in-frame check is at least 1 away in L-inf.
  std::uniform_real_distribution<double> half(-0.5, 0.5);
  const RelPoseDescriptor sentinel = build_outofframe_descriptor(random_camera(rng));
  for (int i = 0; i < 100; ++i) {
    const EulerCamera a = random_camera(rng);
    const EulerCamera b = EulerCamera::make(a.yaw() + 0.3, a.pitch() * 0.5, a.distance(),
                                            half(rng), half(rng));
    const RelPoseDescriptor f = build_descriptor(a, b);
    if (!f.in_frame()) continue;
    CHECK(std::abs(f.dr_x - sentinel.dr_x) >= 1.0);
  }
}

TEST_CASE("project_point") {
  CHECK((project_point(Vec3::Zero(), EulerCamera::make(1.0, 0.3, 4.0))).norm() < 1e-15);
  const Vec2 shifted = project_point(Vec3::Zero(), EulerCamera::make(-2.0, 0.1, 3.0, 0.3, -0.2));
  CHECK(shifted.x() == doctest::Approx(0.3));
  CHECK(shifted.y() == doctest::Approx(-0.2));

  // yaw = 0, pitch = 0, d = 2: camera axes x = +Z, y = +Y, z = -X, t = (0,0,2).
  const EulerCamera cam = EulerCamera::make(0, 0, 2);
  const Vec2 p = project_point(Vec3(0.5, 0.4, 1.0), cam);
  // x_c = (1.0, 0.4, -0.5 + 2) = (1.0, 0.4, 1.5)
  CHECK(p.x() == doctest::Approx(1.0 / 1.5));
  CHECK(p.y() == doctest::Approx(0.4 / 1.5));
  CHECK_THROWS_AS(project_point(Vec3(3, 0, 0), cam), BehindCamera);
}

TEST_CASE("group consistency and descriptor antisymmetry") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 500; ++i) {
    const EulerCamera a = random_camera(rng), b = random_camera(rng), c = random_camera(rng);
    const RigidTransform A = look_at_extrinsics(a), B = look_at_extrinsics(b),
                         C = look_at_extrinsics(c);
    const RigidTransform ab = relative_transform(A, B), bc = relative_transform(B, C),
                         ac = relative_transform(A, C);
    CHECK((ac.R - bc.R * ab.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ac.t - (bc.R * ab.t + bc.t)).cwiseAbs().maxCoeff() < 1e-9);

    // Matrix-level antisymmetry: exp(aa(a,b)) and exp(aa(b,a)) compose to I,
    // and the translations cancel under composition.
    const RelPoseDescriptor fab = build_descriptor(a, b), fba = build_descriptor(b, a);
    const Mat3 Rab = so3_exp(fab.aa), Rba = so3_exp(fba.aa);
    if (fab.aa.norm() < pi - 1e-6) {
      CHECK((Rba * Rab - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((Rba * fab.t_rel + fba.t_rel).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("extrinsics agree with camera_position") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10000; ++i) {
    const EulerCamera cam = random_camera(rng);
    const RigidTransform T = look_at_extrinsics(cam);
    const Vec3 pos = camera_position(cam);
    REQUIRE((-T.R.transpose() * T.t - pos).norm() <= 1e-12 * cam.distance());
    REQUIRE(std::abs(T.t.norm() - cam.distance()) <= 1e-12 * cam.distance());
  }
}

TEST_CASE("camera JSON") {
  const EulerCamera cam = EulerCamera::make(0.5, -0.25, 3.0, 0.1, 0.2);
  const nlohmann::json j = cam;
  CHECK(j.at("d").get<double>() == 3.0);
  CHECK(j.get<EulerCamera>() == cam);
  nlohmann::json extra = j;
  extra["fov"] = 1.0;
  CHECK_THROWS_AS(extra.get<EulerCamera>(), BadParams);
}
