#include "geoedit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <utility>

#include <Eigen/Geometry>

#include "geoedit/errors.hpp"

namespace geoedit {

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Icosphere: return "icosphere";
    case PrimitiveKind::Capsule: return "capsule";
  }
  return "unknown";
}

PrimitiveKind primitive_from_string(const std::string& name) {
  if (name == "box") return PrimitiveKind::Box;
  if (name == "cylinder") return PrimitiveKind::Cylinder;
  if (name == "icosphere") return PrimitiveKind::Icosphere;
  if (name == "capsule") return PrimitiveKind::Capsule;
  throw BadParams("unknown primitive '" + name + "'");
}

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)) {
  const int n = static_cast<int>(vertices_.size());
  for (const Face& f : faces) {
    for (int idx : f)
      if (idx < 0 || idx >= n)
        throw BadParams("face index " + std::to_string(idx) + " out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    const Vec3 e1 = vertices_[f[1]] - vertices_[f[0]];
    const Vec3 e2 = vertices_[f[2]] - vertices_[f[0]];
    if (0.5 * e1.cross(e2).norm() < 1e-12) continue;
    faces_.push_back(f);
  }
  if (faces_.empty()) throw BadParams("mesh has no non-degenerate faces");

  Vec3 lo = vertices_.front(), hi = vertices_.front();
  for (const Vec3& v : vertices_) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  for (Vec3& v : vertices_) {
    v -= center;
    radius_ = std::max(radius_, v.norm());
  }
  build_edges();
}

void TriangleMesh::build_edges() {
  std::map<std::pair<int, int>, std::size_t> index;
  edges_.clear();
  for (int fi = 0; fi < static_cast<int>(faces_.size()); ++fi) {
    const Face& f = faces_[fi];
    for (int k = 0; k < 3; ++k) {
      const int a = std::min(f[k], f[(k + 1) % 3]);
      const int b = std::max(f[k], f[(k + 1) % 3]);
      auto [it, inserted] = index.try_emplace({a, b}, edges_.size());
      if (inserted) {
        edges_.push_back({a, b, fi, -1, true});
      } else {
        Edge& e = edges_[it->second];
        if (e.f1 < 0) e.f1 = fi;
        else e.manifold = false;
      }
    }
  }
}

TriangleMesh TriangleMesh::scaled(double factor) const {
  if (!(factor > 0.0)) throw BadParams("scale factor must be positive");
  std::vector<Vec3> v = vertices_;
  for (Vec3& p : v) p *= factor;
  return TriangleMesh(std::move(v), faces_);
}

double TriangleMesh::signed_volume() const {
  double vol = 0.0;
  for (const Face& f : faces_)
    vol += vertices_[f[0]].dot(vertices_[f[1]].cross(vertices_[f[2]]));
  return vol / 6.0;
}

int TriangleMesh::euler_characteristic() const {
  return static_cast<int>(vertices_.size()) - static_cast<int>(edges_.size()) +
         static_cast<int>(faces_.size());
}

namespace {

using Face = TriangleMesh::Face;

struct RawMesh {
  std::vector<Vec3> v;
  std::vector<Face> f;
};

RawMesh make_box(double sx, double sy, double sz) {
  RawMesh m;
  for (int i = 0; i < 8; ++i)
    m.v.emplace_back((i & 1 ? 0.5 : -0.5) * sx, (i & 2 ? 0.5 : -0.5) * sy,
                     (i & 4 ? 0.5 : -0.5) * sz);
  // Two triangles per side; corner index bits are (x, y, z).
  const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : quads) {
    m.f.push_back({q[0], q[1], q[2]});
    m.f.push_back({q[0], q[2], q[3]});
  }
  return m;
}

// Surface of revolution about +Y from a top-to-bottom profile of
// (radius, y) samples. Zero-radius samples become single pole vertices.
RawMesh make_lathe(const std::vector<std::pair<double, double>>& profile,
                   int segments) {
  RawMesh m;
  std::vector<std::vector<int>> rings;
  for (const auto& [r, y] : profile) {
    std::vector<int> ring;
    if (r <= 0.0) {
      ring.push_back(static_cast<int>(m.v.size()));
      m.v.emplace_back(0.0, y, 0.0);
    } else {
      for (int s = 0; s < segments; ++s) {
        const double a = 2.0 * std::numbers::pi * s / segments;
        ring.push_back(static_cast<int>(m.v.size()));
        m.v.emplace_back(r * std::cos(a), y, r * std::sin(a));
      }
    }
    rings.push_back(std::move(ring));
  }
  for (std::size_t k = 0; k + 1 < rings.size(); ++k) {
    const auto& a = rings[k];
    const auto& b = rings[k + 1];
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      if (a.size() == 1) {
        m.f.push_back({a[0], b[s1], b[s]});
      } else if (b.size() == 1) {
        m.f.push_back({a[s], a[s1], b[0]});
      } else {
        m.f.push_back({a[s], a[s1], b[s1]});
        m.f.push_back({a[s], b[s1], b[s]});
      }
    }
  }
  return m;
}

RawMesh make_icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  RawMesh m;
  m.v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
         {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
         {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
         {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
         {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
         {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (Vec3& v : m.v) v.normalize();
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto [it, inserted] = midpoint.try_emplace({key.first, key.second}, 0);
      if (inserted) {
        it->second = static_cast<int>(m.v.size());
        m.v.push_back((0.5 * (m.v[a] + m.v[b])).normalized());
      }
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(m.f.size() * 4);
    for (const Face& f : m.f) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.f = std::move(next);
  }
  for (Vec3& v : m.v) v *= radius;
  return m;
}

void require(std::span<const double> params, std::size_t n, const char* kind) {
  if (params.size() != n)
    throw BadParams(std::string(kind) + " expects " + std::to_string(n) +
                    " parameters, got " + std::to_string(params.size()));
  for (double p : params)
    if (!(p > 0.0) || !std::isfinite(p))
      throw BadParams(std::string(kind) + " dimensions must be positive");
}

}  // namespace

TriangleMesh make_primitive(PrimitiveKind kind, std::span<const double> params,
                            int subdivisions, bool unit_radius) {
  if (subdivisions < 0 || subdivisions > 4)
    throw BadParams("subdivisions must be in [0, 4]");
  const int segments = 8 << subdivisions;
  RawMesh raw;
  switch (kind) {
    case PrimitiveKind::Box:
      require(params, 3, "box");
      raw = make_box(params[0], params[1], params[2]);
      break;
    case PrimitiveKind::Cylinder: {
      require(params, 2, "cylinder");
      const double r = params[0], h = 0.5 * params[1];
      raw = make_lathe({{0.0, h}, {r, h}, {r, -h}, {0.0, -h}}, segments);
      break;
    }
    case PrimitiveKind::Icosphere:
      require(params, 1, "icosphere");
      raw = make_icosphere(params[0], subdivisions);
      break;
    case PrimitiveKind::Capsule: {
      require(params, 2, "capsule");
      const double r = params[0], h = 0.5 * params[1];
      const int rings = 2 + subdivisions;
      std::vector<std::pair<double, double>> profile{{0.0, h + r}};
      for (int k = 1; k <= rings; ++k) {
        const double phi = 0.5 * std::numbers::pi * k / rings;
        profile.emplace_back(r * std::sin(phi), h + r * std::cos(phi));
      }
      for (int k = rings; k >= 1; --k) {
        const double phi = 0.5 * std::numbers::pi * k / rings;
        profile.emplace_back(r * std::sin(phi), -h - r * std::cos(phi));
      }
      profile.emplace_back(0.0, -h - r);
      raw = make_lathe(profile, segments);
      break;
    }
  }
  TriangleMesh mesh(std::move(raw.v), std::move(raw.f));
  if (mesh.signed_volume() < 0.0) {
    std::vector<Face> flipped = mesh.faces();
    for (Face& f : flipped) std::swap(f[1], f[2]);
    mesh = TriangleMesh(mesh.vertices(), std::move(flipped));
  }
  if (unit_radius) mesh = mesh.scaled(1.0 / mesh.bounding_radius());
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Vec3> v;
  std::vector<Face> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      v.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(v.size()) + i);
      }
      if (idx.size() < 3)
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad face");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k)
        faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return TriangleMesh(std::move(v), std::move(faces));
}

void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (const Vec3& p : mesh.vertices())
    out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const auto& f : mesh.faces())
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace geoedit
