#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geoedit/camera.hpp"

namespace geoedit {

enum class PrimitiveKind { Box, Cylinder, Icosphere, Capsule };

std::string to_string(PrimitiveKind kind);
/// Throws BadParams for an unknown name.
PrimitiveKind primitive_from_string(const std::string& name);

/// Closed triangle mesh centered at the world origin.
///
/// Construction drops faces with out-of-range or repeated indices and faces
/// whose area is below 1e-12, recenters the vertices on their bounding-box
/// center and records the bounding-sphere radius. The undirected edge table
/// is built once here; the silhouette renderer uses it to find contour
/// edges.
class TriangleMesh {
 public:
  using Face = std::array<int, 3>;

  struct Edge {
    int v0, v1;
    int f0, f1;      // f1 == -1 on an open boundary
    bool manifold;   // false when more than two faces share the edge
  };

  TriangleMesh() = default;
  /// Throws BadParams on out-of-range indices or when nothing survives
  /// cleanup.
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Edge>& edges() const { return edges_; }
  double bounding_radius() const { return radius_; }

  /// Uniform scale about the origin.
  TriangleMesh scaled(double factor) const;
  /// Signed volume; positive when faces are wound counter-clockwise seen
  /// from outside.
  double signed_volume() const;
  /// V - E + F
  int euler_characteristic() const;

 private:
  void build_edges();

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<Edge> edges_;
  double radius_ = 0.0;
};

/// Procedural watertight primitives, outward-wound.
///   Box:       params = (size_x, size_y, size_z)
///   Cylinder:  params = (radius, height), axis along +Y
///   Icosphere: params = (radius)
///   Capsule:   params = (radius, straight_height), axis along +Y
/// `subdivisions` (0..4) refines icospheres and sets the segment count of
/// round primitives (8 << subdivisions). With unit_radius the mesh is
/// scaled so its bounding-sphere radius is 1.
TriangleMesh make_primitive(PrimitiveKind kind, std::span<const double> params,
                            int subdivisions = 2, bool unit_radius = true);

/// ASCII OBJ, `v` and `f` records only. Polygons are fan-triangulated and
/// `f a/b/c` style references keep the vertex index. Throws IoError.
TriangleMesh load_obj(const std::filesystem::path& path);
void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace geoedit
