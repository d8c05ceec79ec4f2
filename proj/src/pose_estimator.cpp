#include "geoedit/pose_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geoedit/errors.hpp"
#include "json_fields.hpp"

namespace geoedit {
namespace {

using Params = std::array<double, 5>;

// Keeps every trial pose renderable: pitch inside the guard band, shifts in
// [-1, 1] and the camera safely outside the bounding sphere.
EulerCamera make_camera(const Params& x, double min_d) {
  return EulerCamera::make_clamped(x[0], x[1], std::max(x[2], min_d), x[3], x[4]);
}

double min_distance(const TriangleMesh& mesh) { return 1.05 * mesh.bounding_radius(); }

struct Blob {
  double area = 0.0;  // pixel count
  Vec2 centroid_ndc = Vec2::Zero();
};

Blob blob_stats(const SilhouetteImage& img) {
  Blob b;
  Vec2 acc = Vec2::Zero();
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (img.at(r, c) < 0.5) continue;
      b.area += 1.0;
      acc += Vec2(pixel_center_ndc_x(c, img.width), pixel_center_ndc_y(r, img.height));
    }
  if (b.area > 0.0) b.centroid_ndc = acc / b.area;
  return b;
}

void require_nonempty(const SilhouetteImage& target) {
  if (!std::any_of(target.data.begin(), target.data.end(), [](double v) { return v >= 0.5; }))
    throw EmptyTarget("target silhouette has no pixel at or above 0.5");
}

}  // namespace

void EstimatorConfig::validate() const {
  if (starts < 1) throw BadParams("starts must be >= 1");
  if (max_iters < 0) throw BadParams("max_iters must be >= 0");
  if (!(accept_iou > 0.0 && accept_iou <= 1.0)) throw BadParams("accept_iou must lie in (0, 1]");
  for (int i = 0; i < 5; ++i)
    if (!(step[i] > 0.0) || !(fd_eps[i] > 0.0)) throw BadParams("steps and fd_eps must be positive");
  if (!(sigma_end > 0.0) || !(sigma_start >= sigma_end))
    throw BadParams("need sigma_start >= sigma_end > 0");
  if (halve_every < 1 || max_backtracks < 0) throw BadParams("bad iteration limits");
}

void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = {{"starts", c.starts},           {"max_iters", c.max_iters},
       {"step", c.step},               {"fd_eps", c.fd_eps},
       {"accept_iou", c.accept_iou},   {"sigma_start", c.sigma_start},
       {"sigma_end", c.sigma_end},     {"halve_every", c.halve_every},
       {"max_backtracks", c.max_backtracks}};
}

void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  const std::string what = "estimator config";
  detail::reject_unknown_keys(j,
                              {"starts", "max_iters", "step", "fd_eps", "accept_iou", "sigma_start",
                               "sigma_end", "halve_every", "max_backtracks"},
                              what);
  detail::read_optional(j, "starts", c.starts, what);
  detail::read_optional(j, "max_iters", c.max_iters, what);
  detail::read_optional(j, "step", c.step, what);
  detail::read_optional(j, "fd_eps", c.fd_eps, what);
  detail::read_optional(j, "accept_iou", c.accept_iou, what);
  detail::read_optional(j, "sigma_start", c.sigma_start, what);
  detail::read_optional(j, "sigma_end", c.sigma_end, what);
  detail::read_optional(j, "halve_every", c.halve_every, what);
  detail::read_optional(j, "max_backtracks", c.max_backtracks, what);
}

void to_json(nlohmann::json& j, const PoseEstimate& e) {
  j = {{"cam", e.cam}, {"iou", e.iou}, {"iterations", e.iterations}, {"converged", e.converged}};
}

double soft_iou(const SilhouetteImage& p, const SilhouetteImage& q) {
  if (p.height != q.height || p.width != q.width)
    throw ShapeMismatch("soft_iou: image shapes differ");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    inter += std::min(p.data[i], q.data[i]);
    uni += std::max(p.data[i], q.data[i]);
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

double soft_iou_loss(const TriangleMesh& mesh, const EulerCamera& cam,
                     const SilhouetteImage& target, double sharpness) {
  return 1.0 - soft_iou(render_soft(mesh, cam, target.height, target.width, sharpness), target);
}

std::array<double, 5> soft_iou_gradient(const TriangleMesh& mesh, const EulerCamera& cam,
                                        const SilhouetteImage& target, double sharpness,
                                        const std::array<double, 5>& eps) {
  const Params x = cam.to_array();
  const double min_d = min_distance(mesh);
  Params g{};
  for (int i = 0; i < 5; ++i) {
    const double h = i == 2 ? eps[i] * x[2] : eps[i];
    Params lo = x, hi = x;
    lo[i] -= h;
    hi[i] += h;
    g[i] = (soft_iou_loss(mesh, make_camera(hi, min_d), target, sharpness) -
            soft_iou_loss(mesh, make_camera(lo, min_d), target, sharpness)) /
           (2.0 * h);
  }
  return g;
}

double hard_iou(const TriangleMesh& mesh, const EulerCamera& cam, const SilhouetteImage& target) {
  return mask_iou(to_mask(render_hard(mesh, cam, target.height, target.width)), to_mask(target));
}

std::vector<EulerCamera> initial_cameras(const TriangleMesh& mesh, const SilhouetteImage& target,
                                         const EstimatorConfig& cfg) {
  require_nonempty(target);
  const Blob tb = blob_stats(target);
  const double d_ref = 3.0 * mesh.bounding_radius();
  const double min_d = min_distance(mesh);
  std::vector<EulerCamera> out;
  for (int k = 0; k < cfg.starts; ++k) {
    const double yaw = -std::numbers::pi + 2.0 * std::numbers::pi * (k + 0.5) / cfg.starts;
    // Apparent area scales with 1 / d^2; calibrate on the mesh itself.
    const Blob ref = blob_stats(render_hard(mesh, EulerCamera::make(yaw, 0.0, d_ref),
                                            target.height, target.width));
    const double d = ref.area > 0.0 ? std::max(min_d, d_ref * std::sqrt(ref.area / tb.area)) : d_ref;
    const Blob at_d = blob_stats(render_hard(mesh, EulerCamera::make(yaw, 0.0, d),
                                             target.height, target.width));
    const Vec2 shift = tb.centroid_ndc - at_d.centroid_ndc;
    out.push_back(EulerCamera::make_clamped(yaw, 0.0, d, shift.x(), shift.y()));
  }
  return out;
}

PoseEstimate descend(const TriangleMesh& mesh, const SilhouetteImage& target,
                     const EstimatorConfig& cfg, const EulerCamera& start, DescentTrace* trace) {
  const double min_d = min_distance(mesh);
  Params x = start.to_array();
  double sigma = cfg.sigma_start;
  double loss = soft_iou_loss(mesh, start, target, sigma);
  double alpha = 1.0;
  int stage_iters = 0;

  PoseEstimate best{start, hard_iou(mesh, start, target), 0, false};
  auto finish_stage = [&](int iterations) {
    const EulerCamera cam = make_camera(x, min_d);
    const double iou = hard_iou(mesh, cam, target);
    if (iou > best.iou) best = {cam, iou, iterations, false};
  };

  int it = 0;
  bool stage_open = true;
  while (it < cfg.max_iters) {
    const EulerCamera cam = make_camera(x, min_d);
    const Params g = soft_iou_gradient(mesh, cam, target, sigma, cfg.fd_eps);
    // Steepest descent in coordinates scaled by the per-parameter step, so
    // alpha = 1 moves the dominant parameter by about one step.
    Params scale{}, dir{};
    double norm = 0.0;
    for (int i = 0; i < 5; ++i) {
      scale[i] = i == 2 ? cfg.step[i] * x[2] : cfg.step[i];
      norm += scale[i] * g[i] * scale[i] * g[i];
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < 5; ++i) dir[i] = norm > 0.0 ? scale[i] * scale[i] * g[i] / norm : 0.0;

    bool accepted = false;
    if (norm > 0.0 && std::isfinite(norm)) {
      for (int b = 0; b <= cfg.max_backtracks; ++b) {
        Params trial = x;
        for (int i = 0; i < 5; ++i) trial[i] -= alpha * dir[i];
        const EulerCamera tc = make_camera(trial, min_d);
        const double l = soft_iou_loss(mesh, tc, target, sigma);
        if (l < loss) {
          x = tc.to_array();
          loss = l;
          accepted = true;
          alpha = std::min(1.0, 2.0 * alpha);
          break;
        }
        alpha *= 0.5;
      }
    }
    ++it;
    ++stage_iters;
    if (accepted && trace) {
      trace->sigma.push_back(sigma);
      trace->soft_iou.push_back(1.0 - loss);
    }
    if (accepted && stage_iters < cfg.halve_every) continue;

    finish_stage(it);
    stage_open = false;
    const bool at_floor = sigma <= cfg.sigma_end;
    if (at_floor && !accepted) break;
    sigma = std::max(cfg.sigma_end, 0.5 * sigma);
    loss = soft_iou_loss(mesh, make_camera(x, min_d), target, sigma);
    alpha = 1.0;
    stage_iters = 0;
    stage_open = true;
  }
  if (stage_open) finish_stage(it);
  best.iterations = it;
  best.converged = best.iou >= cfg.accept_iou;
  return best;
}

PoseEstimate estimate_camera(const TriangleMesh& mesh, const SilhouetteImage& target,
                             const EstimatorConfig& cfg) {
  cfg.validate();
  const std::vector<EulerCamera> starts = initial_cameras(mesh, target, cfg);
  PoseEstimate best;
  best.iou = -1.0;
  int total_iters = 0;
  for (const EulerCamera& s : starts) {
    const PoseEstimate e = descend(mesh, target, cfg, s);
    total_iters += e.iterations;
    if (e.iou > best.iou) best = e;
  }
  best.iterations = total_iters;
  best.converged = best.iou >= cfg.accept_iou;
  return best;
}

std::vector<PoseEstimate> filter_by_iou(const std::vector<PoseEstimate>& estimates,
                                        double threshold) {
  std::vector<PoseEstimate> out;
  std::copy_if(estimates.begin(), estimates.end(), std::back_inserter(out),
               [&](const PoseEstimate& e) { return e.iou >= threshold; });
  return out;
}

}  // namespace geoedit
