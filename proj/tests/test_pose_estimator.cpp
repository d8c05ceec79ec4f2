#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "geoedit/errors.hpp"
#include "geoedit/pose_estimator.hpp"

using namespace geoedit;
using std::numbers::pi;

namespace {

TriangleMesh box_mesh() {
  const double dims[3] = {1.0, 0.6, 0.45};
  return make_primitive(PrimitiveKind::Box, dims, 0);
}

// Five-point stencil on the same parameterization as the estimator.
std::array<double, 5> stencil_gradient(const TriangleMesh& mesh, const EulerCamera& cam,
                                       const SilhouetteImage& target, double sigma, double eps) {
  const auto x = cam.to_array();
  std::array<double, 5> g{};
  for (int i = 0; i < 5; ++i) {
    const double h = i == 2 ? eps * x[2] : eps;
    auto at = [&](double k) {
      auto y = x;
      y[i] += k * h;
      return soft_iou_loss(mesh, EulerCamera::from_array(y), target, sigma);
    };
    g[i] = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * h);
  }
  return g;
}

double yaw_error_mod(double a, double b, double period) {
  double e = std::fmod(std::abs(wrap_angle(a - b)), period);
  return std::min(e, period - e);
}

}  // namespace

TEST_CASE("soft_iou definition") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    SilhouetteImage p(6, 7), q(6, 7);
    double inter = 0.0, uni = 0.0;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      p.data[k] = u(rng);
      q.data[k] = u(rng);
      inter += p.data[k] < q.data[k] ? p.data[k] : q.data[k];
      uni += p.data[k] < q.data[k] ? q.data[k] : p.data[k];
    }
    CHECK(soft_iou(p, q) == doctest::Approx(inter / uni).epsilon(1e-14));
    CHECK(soft_iou(p, q) == soft_iou(q, p));
  }
  CHECK(soft_iou(SilhouetteImage(4, 4), SilhouetteImage(4, 4)) == 1.0);
  CHECK_THROWS_AS(soft_iou(SilhouetteImage(4, 4), SilhouetteImage(4, 5)), ShapeMismatch);
}

TEST_CASE("soft_iou_loss examples") {
  const TriangleMesh box = box_mesh();
  const EulerCamera cam = EulerCamera::make(0.4, 0.2, 3.0, 0.1, -0.05);
  const SilhouetteImage self = render_soft(box, cam, 64, 64, 0.005);
  CHECK(soft_iou_loss(box, cam, self, 0.005) < 1e-6);
  CHECK(soft_iou_loss(box, cam, SilhouetteImage(64, 64), 0.005) == 1.0);
}

TEST_CASE("soft_iou_loss grows with yaw offset") {
  const TriangleMesh box = box_mesh();
  const EulerCamera truth = EulerCamera::make(0.3, 0.15, 3.0);
  const SilhouetteImage target = render_soft(box, truth, 128, 128, 0.005);
  double prev = soft_iou_loss(box, truth, target, 0.005);
  for (int deg = 2; deg <= 20; deg += 2) {
    const EulerCamera c = EulerCamera::make(0.3 + deg * pi / 180, 0.15, 3.0);
    const double l = soft_iou_loss(box, c, target, 0.005);
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("finite-difference gradient agrees with a five-point stencil") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const TriangleMesh box = box_mesh();
  for (int i = 0; i < 8; ++i) {
    const EulerCamera truth = EulerCamera::make(-pi + 2 * pi * u(rng), -0.4 + 0.8 * u(rng), 2.5 + u(rng),
                                                -0.2 + 0.4 * u(rng), -0.2 + 0.4 * u(rng));
    const EulerCamera probe = EulerCamera::make(truth.yaw() + 0.15, truth.pitch() - 0.1,
                                                truth.distance() * 1.1, truth.rx() + 0.05, truth.ry());
    const SilhouetteImage target = render_hard(box, truth, 64, 64);
    const double sigma = 0.02;
    const auto g = soft_iou_gradient(box, probe, target, sigma, {1e-3, 1e-3, 1e-3, 1e-3, 1e-3});
    const auto g5 = stencil_gradient(box, probe, target, sigma, 1e-3);
    double diff = 0.0, norm = 0.0;
    for (int k = 0; k < 5; ++k) {
      diff += (g[k] - g5[k]) * (g[k] - g5[k]);
      norm += g5[k] * g5[k];
    }
    CHECK(norm > 0.0);
    CHECK(std::sqrt(diff / norm) < 1e-2);
  }
}

TEST_CASE("initial cameras follow the blob statistics") {
  const double r[1] = {1.0};
  const TriangleMesh sphere = make_primitive(PrimitiveKind::Icosphere, r, 3);
  const EulerCamera truth = EulerCamera::make(0.0, 0.0, 3.5, 0.2, -0.1);
  const SilhouetteImage target = render_hard(sphere, truth, 128, 128);
  EstimatorConfig cfg;
  cfg.starts = 4;
  const auto starts = initial_cameras(sphere, target, cfg);
  REQUIRE(starts.size() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK(starts[k].yaw() == doctest::Approx(-pi + 2 * pi * (k + 0.5) / 4));
    CHECK(starts[k].pitch() == 0.0);
    CHECK(std::abs(starts[k].distance() - 3.5) / 3.5 < 0.05);
    CHECK(std::abs(starts[k].rx() - 0.2) < 0.02);
    CHECK(std::abs(starts[k].ry() + 0.1) < 0.02);
  }
  CHECK_THROWS_AS(initial_cameras(sphere, SilhouetteImage(32, 32), cfg), EmptyTarget);
}

TEST_CASE("descent keeps the best soft IoU non-decreasing within a stage") {
  const TriangleMesh box = box_mesh();
  const EulerCamera truth = EulerCamera::make(1.0, 0.3, 3.0, 0.1, 0.05);
  const SilhouetteImage target = render_hard(box, truth, 64, 64);
  EstimatorConfig cfg;
  DescentTrace trace;
  const PoseEstimate e = descend(box, target, cfg, EulerCamera::make(0.6, 0.0, 2.6), &trace);
  REQUIRE(trace.soft_iou.size() > 5);
  for (std::size_t i = 1; i < trace.soft_iou.size(); ++i)
    if (trace.sigma[i] == trace.sigma[i - 1]) CHECK(trace.soft_iou[i] > trace.soft_iou[i - 1]);
  CHECK(e.iou >= 0.0);
  CHECK(e.iou <= 1.0);
}

TEST_CASE("estimate_camera round trip on a box") {
  const TriangleMesh box = box_mesh();
  const EulerCamera truth = EulerCamera::make(0.9, 0.25, 3.0, -0.1, 0.08);
  const SilhouetteImage target = render_hard(box, truth, 128, 128);
  const PoseEstimate e = estimate_camera(box, target);
  CHECK(e.converged);
  CHECK(e.iou >= 0.90);
  CHECK(yaw_error_mod(e.cam.yaw(), truth.yaw(), pi) < 5 * pi / 180);
  CHECK(std::abs(e.cam.distance() - 3.0) / 3.0 < 0.10);
  CHECK(e.iterations > 0);
}

TEST_CASE("estimate_camera on an icosphere") {
  const double r[1] = {1.0};
  const TriangleMesh sphere = make_primitive(PrimitiveKind::Icosphere, r, 2);
  const SilhouetteImage target = render_hard(sphere, EulerCamera::make(2.0, -0.3, 2.8, 0.15, 0.1), 64, 64);
  EstimatorConfig cfg;
  cfg.starts = 2;
  const PoseEstimate e = estimate_camera(sphere, target, cfg);
  CHECK(e.iou >= 0.95);
  CHECK(e.converged);
}

TEST_CASE("unreachable targets are not accepted") {
  const TriangleMesh box = box_mesh();
  EstimatorConfig cfg;
  cfg.starts = 2;
  const PoseEstimate e = estimate_camera(box, SilhouetteImage(32, 32, 1.0), cfg);
  CHECK_FALSE(e.converged);
  CHECK(e.iou < 0.90);
  CHECK_THROWS_AS(estimate_camera(box, SilhouetteImage(32, 32, 0.2), cfg), EmptyTarget);
}

TEST_CASE("estimation is deterministic") {
  const TriangleMesh box = box_mesh();
  const SilhouetteImage target = render_hard(box, EulerCamera::make(-2.0, 0.1, 3.2, 0.0, 0.1), 48, 48);
  EstimatorConfig cfg;
  cfg.starts = 2;
  const PoseEstimate a = estimate_camera(box, target, cfg), b = estimate_camera(box, target, cfg);
  CHECK(a.cam == b.cam);
  CHECK(a.iou == b.iou);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("stratified starts do at least as well as one start") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const TriangleMesh box = box_mesh();
  EstimatorConfig one;
  one.starts = 1;
  int ok1 = 0, ok8 = 0;
  for (int i = 0; i < 4; ++i) {
    const EulerCamera truth = EulerCamera::make(-pi + 2 * pi * u(rng), -0.4 + 0.8 * u(rng), 2.5 + u(rng));
    const SilhouetteImage target = render_hard(box, truth, 64, 64);
    const PoseEstimate e1 = estimate_camera(box, target, one), e8 = estimate_camera(box, target);
    CHECK(e8.iou >= e1.iou - 1e-12);
    ok1 += e1.converged;
    ok8 += e8.converged;
  }
  CHECK(ok8 >= ok1);
}

TEST_CASE("filter_by_iou") {
  auto est = [](double iou) {
    PoseEstimate e;
    e.iou = iou;
    return e;
  };
  const auto kept = filter_by_iou({est(0.95), est(0.80), est(0.91)}, 0.90);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].iou == 0.95);
  CHECK(kept[1].iou == 0.91);
  CHECK(filter_by_iou({}, 0.9).empty());
  CHECK(filter_by_iou({est(0.1), est(0.0)}, 0.0).size() == 2);
}

TEST_CASE("estimator config validation and JSON") {
  EstimatorConfig c;
  CHECK_NOTHROW(c.validate());
  c.starts = 0;
  CHECK_THROWS_AS(c.validate(), BadParams);
  c = {};
  c.accept_iou = 1.5;
  CHECK_THROWS_AS(c.validate(), BadParams);
  c = {};
  c.starts = 3;
  c.sigma_end = 0.01;
  const EstimatorConfig back = nlohmann::json(c).get<EstimatorConfig>();
  CHECK(back.starts == 3);
  CHECK(back.sigma_end == 0.01);
  CHECK(back.step == c.step);
  CHECK_THROWS_AS(nlohmann::json({{"start", 3}}).get<EstimatorConfig>(), ConfigError);
}
