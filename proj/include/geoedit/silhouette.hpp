#pragma once

#include <vector>

#include "geoedit/camera.hpp"
#include "geoedit/mask.hpp"
#include "geoedit/mesh.hpp"

namespace geoedit {

/// H x W coverage grid in [0, 1], row-major, row 0 at the top of the image.
struct SilhouetteImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  SilhouetteImage() = default;
  SilhouetteImage(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  double sum() const;
};

/// NDC coordinate of a pixel center. NDC spans [-1, 1] over both axes with
/// +y pointing up.
inline double pixel_center_ndc_x(int col, int width) {
  return (col + 0.5) * 2.0 / width - 1.0;
}
inline double pixel_center_ndc_y(int row, int height) {
  return 1.0 - (row + 0.5) * 2.0 / height;
}

/// Mesh vertices projected to NDC for one camera, plus per-face winding.
struct ProjectedMesh {
  std::vector<Vec2> points;
  std::vector<double> depth;       // camera-space z per vertex
  std::vector<double> face_area2;  // twice the signed NDC area per face

  /// Throws CameraInsideObject when d <= bounding radius.
  static ProjectedMesh make(const TriangleMesh& mesh, const EulerCamera& cam);
};

/// Pixel is 1 iff its center lies inside (edges inclusive) the projection of
/// any triangle, regardless of facing. No occlusion handling.
SilhouetteImage render_hard(const TriangleMesh& mesh, const EulerCamera& cam,
                            int height, int width);

/// Coverage = logistic(sd / sharpness), sd being the signed NDC distance of
/// the pixel center to the silhouette boundary (positive inside). The
/// boundary is taken from the contour edges of the projected mesh: edges
/// between a front- and a back-facing triangle plus open or non-manifold
/// edges. Distances are capped at 20 sharpness, so coverage saturates at
/// logistic(+-20) far from the boundary.
SilhouetteImage render_soft(const TriangleMesh& mesh, const EulerCamera& cam,
                            int height, int width, double sharpness);

/// Pixels with value >= threshold become ones (T = 1 volume).
BinaryMaskVolume to_mask(const SilhouetteImage& img, double threshold = 0.5);
/// One frame of a mask as a {0,1} silhouette.
SilhouetteImage from_mask(const BinaryMaskVolume& m, int frame = 0);

}  // namespace geoedit
