#include "geoedit/silhouette.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "geoedit/errors.hpp"
#include "raster_internal.hpp"

namespace geoedit {

double SilhouetteImage::sum() const {
  return std::accumulate(data.begin(), data.end(), 0.0);
}

ProjectedMesh ProjectedMesh::make(const TriangleMesh& mesh, const EulerCamera& cam) {
  if (cam.distance() <= mesh.bounding_radius())
    throw CameraInsideObject("camera distance " + std::to_string(cam.distance()) +
                             " <= bounding radius " +
                             std::to_string(mesh.bounding_radius()));
  const RigidTransform T = look_at_extrinsics(cam);
  ProjectedMesh pm;
  pm.points.reserve(mesh.vertices().size());
  pm.depth.reserve(mesh.vertices().size());
  for (const Vec3& v : mesh.vertices()) {
    const Vec3 xc = T.apply(v);
    if (!(xc.z() > 1e-9)) throw BehindCamera("mesh vertex behind camera");
    pm.points.emplace_back(xc.x() / xc.z() + cam.rx(), xc.y() / xc.z() + cam.ry());
    pm.depth.push_back(xc.z());
  }
  pm.face_area2.reserve(mesh.faces().size());
  for (const auto& f : mesh.faces()) {
    const Vec2 e1 = pm.points[f[1]] - pm.points[f[0]];
    const Vec2 e2 = pm.points[f[2]] - pm.points[f[0]];
    pm.face_area2.push_back(e1.x() * e2.y() - e1.y() * e2.x());
  }
  return pm;
}

namespace {

void rasterize_hard(const TriangleMesh& mesh, const ProjectedMesh& pm,
                    SilhouetteImage& img) {
  for (const auto& f : mesh.faces()) {
    detail::for_each_covered_pixel(
        pm.points[f[0]], pm.points[f[1]], pm.points[f[2]], img.height, img.width,
        [&](int r, int c, double, double, double) { img.at(r, c) = 1.0; });
  }
}

void check_size(int height, int width) {
  if (height < 1 || width < 1) throw BadParams("image size must be positive");
}

constexpr double kCap = 20.0;

struct Segment {
  Vec2 a;
  Vec2 d;
  double inv_len2;
};

}  // namespace

SilhouetteImage render_hard(const TriangleMesh& mesh, const EulerCamera& cam,
                            int height, int width) {
  check_size(height, width);
  const ProjectedMesh pm = ProjectedMesh::make(mesh, cam);
  SilhouetteImage img(height, width);
  rasterize_hard(mesh, pm, img);
  return img;
}

SilhouetteImage render_soft(const TriangleMesh& mesh, const EulerCamera& cam,
                            int height, int width, double sharpness) {
  check_size(height, width);
  if (!(sharpness > 0.0)) throw BadParams("sharpness must be positive");
  const ProjectedMesh pm = ProjectedMesh::make(mesh, cam);
  SilhouetteImage inside(height, width);
  rasterize_hard(mesh, pm, inside);

  std::vector<Segment> segments;
  for (const auto& e : mesh.edges()) {
    bool contour = !e.manifold || e.f1 < 0;
    if (!contour) contour = (pm.face_area2[e.f0] > 0.0) != (pm.face_area2[e.f1] > 0.0);
    if (!contour) continue;
    const Vec2 a = pm.points[e.v0];
    const Vec2 d = pm.points[e.v1] - a;
    const double len2 = d.squaredNorm();
    segments.push_back({a, d, len2 > 0.0 ? 1.0 / len2 : 0.0});
  }
  if (segments.empty()) return inside;

  // Squared distance to the nearest contour segment, capped at kCap sharpness
  // units. Each segment only visits pixels inside its own capped bounding box,
  // which keeps sharp renders cheap.
  const double cap = kCap * sharpness;
  std::vector<double> px(width), py(height);
  for (int c = 0; c < width; ++c) px[c] = pixel_center_ndc_x(c, width);
  for (int r = 0; r < height; ++r) py[r] = pixel_center_ndc_y(r, height);
  std::vector<double> dist2(static_cast<std::size_t>(height) * width, cap * cap);
  for (const Segment& s : segments) {
    const Vec2 b = s.a + s.d;
    const double x0 = std::min(s.a.x(), b.x()) - cap, x1 = std::max(s.a.x(), b.x()) + cap;
    const double y0 = std::min(s.a.y(), b.y()) - cap, y1 = std::max(s.a.y(), b.y()) + cap;
    const int c_lo = std::max(0, static_cast<int>(std::floor((x0 + 1.0) * width / 2.0 - 0.5)));
    const int c_hi = std::min(width - 1, static_cast<int>(std::ceil((x1 + 1.0) * width / 2.0 - 0.5)));
    const int r_lo = std::max(0, static_cast<int>(std::floor((1.0 - y1) * height / 2.0 - 0.5)));
    const int r_hi = std::min(height - 1, static_cast<int>(std::ceil((1.0 - y0) * height / 2.0 - 0.5)));
    for (int r = r_lo; r <= r_hi; ++r) {
      const double wy = py[r] - s.a.y();
      double* row = dist2.data() + static_cast<std::size_t>(r) * width;
      for (int c = c_lo; c <= c_hi; ++c) {
        const double wx = px[c] - s.a.x();
        const double u = std::clamp((wx * s.d.x() + wy * s.d.y()) * s.inv_len2, 0.0, 1.0);
        const double dx = wx - u * s.d.x(), dy = wy - u * s.d.y();
        row[c] = std::min(row[c], dx * dx + dy * dy);
      }
    }
  }

  SilhouetteImage out(height, width);
  for (std::size_t i = 0; i < dist2.size(); ++i) {
    const double dist = std::sqrt(dist2[i]);
    const double sd = inside.data[i] > 0.0 ? dist : -dist;
    out.data[i] = 1.0 / (1.0 + std::exp(-sd / sharpness));
  }
  return out;
}

BinaryMaskVolume to_mask(const SilhouetteImage& img, double threshold) {
  std::vector<std::uint8_t> bits(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bits.begin(),
                 [&](double v) { return v >= threshold ? 1 : 0; });
  return BinaryMaskVolume(1, img.height, img.width, std::move(bits));
}

SilhouetteImage from_mask(const BinaryMaskVolume& m, int frame) {
  SilhouetteImage img(m.height(), m.width());
  const auto fr = m.frame(frame);
  std::transform(fr.begin(), fr.end(), img.data.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return img;
}

}  // namespace geoedit
