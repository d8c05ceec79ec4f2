#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "geoedit/camera.hpp"
#include "geoedit/mesh.hpp"
#include "geoedit/silhouette.hpp"

namespace geoedit {

struct PoseEstimate {
  EulerCamera cam;
  double iou = 0.0;  // hard IoU against the thresholded target
  int iterations = 0;
  bool converged = false;
};

/// Parameter order everywhere below: yaw, pitch, d, r_x, r_y. Entries for d
/// are relative to the current distance.
struct EstimatorConfig {
  int starts = 8;
  int max_iters = 200;
  std::array<double, 5> step{0.25, 0.1, 0.1, 0.05, 0.05};
  std::array<double, 5> fd_eps{1e-3, 1e-3, 1e-3, 1e-3, 1e-3};
  double accept_iou = 0.90;
  double sigma_start = 0.05;
  double sigma_end = 0.005;
  int halve_every = 50;
  int max_backtracks = 6;

  /// Throws BadParams.
  void validate() const;
};

void to_json(nlohmann::json& j, const EstimatorConfig& c);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
void from_json(const nlohmann::json& j, EstimatorConfig& c);
void to_json(nlohmann::json& j, const PoseEstimate& e);

/// sum(min(p, q)) / sum(max(p, q)); 1 when both are empty.
double soft_iou(const SilhouetteImage& p, const SilhouetteImage& q);

/// 1 - soft IoU between render_soft(mesh, cam, sharpness) and the target.
/// Renders at the target resolution, so shapes always agree.
double soft_iou_loss(const TriangleMesh& mesh, const EulerCamera& cam,
                     const SilhouetteImage& target, double sharpness = 0.005);

/// Central-difference gradient of soft_iou_loss with the configured
/// per-parameter epsilons.
std::array<double, 5> soft_iou_gradient(const TriangleMesh& mesh, const EulerCamera& cam,
                                        const SilhouetteImage& target, double sharpness,
                                        const std::array<double, 5>& eps);

/// Hard IoU of the mesh at cam against the target thresholded at 0.5.
double hard_iou(const TriangleMesh& mesh, const EulerCamera& cam, const SilhouetteImage& target);

/// Starting cameras: yaw evenly spaced over (-pi, pi] with a half-step
/// offset, pitch 0, d from the apparent area and (r_x, r_y) from the target
/// centroid. Throws EmptyTarget.
std::vector<EulerCamera> initial_cameras(const TriangleMesh& mesh, const SilhouetteImage& target,
                                         const EstimatorConfig& cfg);

/// Soft IoU after every accepted step of one descent, tagged with the
/// sharpness it was measured at.
struct DescentTrace {
  std::vector<double> sigma;
  std::vector<double> soft_iou;
};

/// One annealed gradient descent from `start`. Returns the best pose by hard
/// IoU among the end points of its sharpness stages.
PoseEstimate descend(const TriangleMesh& mesh, const SilhouetteImage& target,
                     const EstimatorConfig& cfg, const EulerCamera& start,
                     DescentTrace* trace = nullptr);

/// Multi-start estimation; the best hard IoU wins, ties go to the lowest
/// start index. Throws EmptyTarget.
PoseEstimate estimate_camera(const TriangleMesh& mesh, const SilhouetteImage& target,
                             const EstimatorConfig& cfg = {});

std::vector<PoseEstimate> filter_by_iou(const std::vector<PoseEstimate>& estimates,
                                        double threshold);

}  // namespace geoedit
