#include "geoedit/scene_synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <Eigen/Geometry>

#include "geoedit/errors.hpp"
#include "geoedit/silhouette.hpp"
#include "json_fields.hpp"
#include "raster_internal.hpp"

namespace geoedit {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void check_interval(const Interval& iv, const char* name, double lo, double hi) {
  if (!(std::isfinite(iv.lo) && std::isfinite(iv.hi)) || iv.lo > iv.hi)
    throw BadRanges(std::string("source.") + name + ": need lo <= hi");
  if (iv.lo < lo || iv.hi > hi)
    throw BadRanges(std::string("source.") + name + ": outside [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
}

// Bounding radius of every generated mesh (make_primitive with unit_radius).
constexpr double kMeshRadius = 1.0;
constexpr double kMinTargetDistance = 1.5 * kMeshRadius;

std::vector<double> draw_params(PrimitiveKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case PrimitiveKind::Box:
      return {uniform(rng, 0.7, 1.3), uniform(rng, 0.7, 1.3), uniform(rng, 0.7, 1.3)};
    case PrimitiveKind::Cylinder:
      return {uniform(rng, 0.35, 0.5), uniform(rng, 0.7, 1.0)};
    case PrimitiveKind::Capsule:
      return {uniform(rng, 0.3, 0.45), uniform(rng, 0.3, 0.6)};
    case PrimitiveKind::Icosphere:
      return {1.0};
  }
  return {};
}

// Smallest max-channel deviation between the shaded object and the
// background over the shading intensity range.
double contrast(const Vec3& tint, const Vec3& bg) {
  double worst = std::numeric_limits<double>::infinity();
  for (double intensity : {0.4, 0.7, 1.0})
    worst = std::min(worst, (tint * intensity - bg).cwiseAbs().maxCoeff());
  return worst;
}

Vec3 draw_color(std::mt19937_64& rng, double lo, double hi) {
  const double r = uniform(rng, lo, hi), g = uniform(rng, lo, hi), b = uniform(rng, lo, hi);
  return {r, g, b};
}

nlohmann::json interval_json(const Interval& iv) { return nlohmann::json::array({iv.lo, iv.hi}); }

Interval interval_from(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(what + " must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::string pair_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}

Vec3 vec3_from(const nlohmann::json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace

void CameraRanges::validate() const {
  if (!(std::isfinite(yaw.lo) && std::isfinite(yaw.hi)) || yaw.lo > yaw.hi)
    throw BadRanges("source.yaw: need lo <= hi");
  if (yaw.hi - yaw.lo > 2.0 * 3.141592653589793 + 1e-12)
    throw BadRanges("source.yaw: interval wider than 2 pi");
  check_interval(pitch, "pitch", -kMaxPitch, kMaxPitch);
  check_interval(d, "d", 1.05 * kMeshRadius, std::numeric_limits<double>::max());
  check_interval(rx, "rx", -1.0, 1.0);
  check_interval(ry, "ry", -1.0, 1.0);
}

EulerCamera CameraRanges::center() const {
  return EulerCamera::make(yaw.mid(), pitch.mid(), d.mid(), rx.mid(), ry.mid());
}

EulerCamera sample_source_camera(std::mt19937_64& rng, const CameraRanges& ranges) {
  ranges.validate();
  const double yaw = uniform(rng, ranges.yaw.lo, ranges.yaw.hi);
  const double pitch = uniform(rng, ranges.pitch.lo, ranges.pitch.hi);
  const double d = uniform(rng, ranges.d.lo, ranges.d.hi);
  const double rx = uniform(rng, ranges.rx.lo, ranges.rx.hi);
  const double ry = uniform(rng, ranges.ry.lo, ranges.ry.hi);
  return EulerCamera::make(yaw, pitch, d, rx, ry);
}

EulerCamera sample_target_camera(const EulerCamera& src, std::mt19937_64& rng,
                                 const PerturbWidths& w, double min_d) {
  const double yaw = src.yaw() + uniform(rng, -w.yaw, w.yaw);
  const double pitch = src.pitch() + uniform(rng, -w.pitch, w.pitch);
  const double d = src.distance() * std::exp(uniform(rng, -w.log_d, w.log_d));
  const double rx = src.rx() + uniform(rng, -w.rx, w.rx);
  const double ry = src.ry() + uniform(rng, -w.ry, w.ry);
  return EulerCamera::make_clamped(yaw, pitch, std::max(d, min_d), rx, ry);
}

TriangleMesh ObjectSpec::build() const { return make_primitive(kind, params, subdivisions); }

RgbImage render_shaded(const ToyScene& scene, const EulerCamera& cam, int height, int width) {
  const TriangleMesh& mesh = scene.mesh;
  const ProjectedMesh pm = ProjectedMesh::make(mesh, cam);
  const Vec3 light = Vec3(1.0, 1.0, 1.0).normalized();

  RgbImage img(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = scene.background[ch];

  std::vector<double> depth(static_cast<std::size_t>(height) * width,
                            std::numeric_limits<double>::infinity());
  for (const auto& f : mesh.faces()) {
    const Vec3& a = mesh.vertices()[f[0]];
    const Vec3 n = (mesh.vertices()[f[1]] - a).cross(mesh.vertices()[f[2]] - a).normalized();
    const Vec3 color = scene.tint * (0.4 + 0.6 * std::max(0.0, n.dot(light)));
    const double z0 = pm.depth[f[0]], z1 = pm.depth[f[1]], z2 = pm.depth[f[2]];
    detail::for_each_covered_pixel(
        pm.points[f[0]], pm.points[f[1]], pm.points[f[2]], height, width,
        [&](int r, int c, double l0, double l1, double l2) {
          const double z = l0 * z0 + l1 * z1 + l2 * z2;
          double& zb = depth[static_cast<std::size_t>(r) * width + c];
          if (z >= zb) return;
          zb = z;
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
        });
  }
  return img;
}

RgbImage reference_crop(const RgbImage& img, const BinaryMaskVolume& mask, int size,
                        const Vec3& background) {
  RgbImage out(size, size);
  const auto box = tight_bbox(mask, 0);
  if (!box) {
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = background[ch];
    return out;
  }
  const double sy = static_cast<double>(box->height()) / size;
  const double sx = static_cast<double>(box->width()) / size;
  for (int r = 0; r < size; ++r) {
    const double y = std::clamp(box->row_min + (r + 0.5) * sy - 0.5, double(box->row_min),
                                double(box->row_max - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, box->row_max - 1);
    const double fy = y - y0;
    for (int c = 0; c < size; ++c) {
      const double x = std::clamp(box->col_min + (c + 0.5) * sx - 0.5, double(box->col_min),
                                  double(box->col_max - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, box->col_max - 1);
      const double fx = x - x0;
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = (1 - fy) * ((1 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch)) +
                           fy * ((1 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch));
    }
  }
  return out;
}

SamplePair render_pair(const ToyScene& scene, const EulerCamera& s_src, const EulerCamera& s_tgt,
                       int height, int width, int ref_size) {
  SamplePair p;
  p.s_src = s_src;
  p.s_tgt = s_tgt;
  p.x_src = render_shaded(scene, s_src, height, width);
  p.x_tgt = render_shaded(scene, s_tgt, height, width);
  p.m_src = to_mask(render_hard(scene.mesh, s_src, height, width));
  p.m_tgt_true = to_mask(render_hard(scene.mesh, s_tgt, height, width));
  p.f = build_descriptor(s_src, s_tgt);
  p.i_ref = reference_crop(p.x_src, p.m_src, ref_size, scene.background);
  p.x_bg = RgbImage(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < 3; ++ch) p.x_bg.at(r, c, ch) = scene.background[ch];
  return p;
}

void GenConfig::validate() const {
  if (n_pairs < 0) throw ConfigError("n_pairs must be >= 0");
  if (height < 8 || width < 8 || height % 4 || width % 4)
    throw ConfigError("height and width must be multiples of 4, at least 8");
  if (ref_size < 4 || ref_size % 4) throw ConfigError("ref_size must be a positive multiple of 4");
  if (kinds.empty()) throw ConfigError("kinds must not be empty");
  if (subdivisions < 0 || subdivisions > 4) throw ConfigError("subdivisions must lie in [0, 4]");
  source.validate();
  for (double w : {perturb.yaw, perturb.pitch, perturb.log_d, perturb.rx, perturb.ry})
    if (!(w >= 0.0) || !std::isfinite(w)) throw BadRanges("perturb widths must be >= 0");
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.push_back(to_string(k));
  j = {{"n_pairs", c.n_pairs},
       {"height", c.height},
       {"width", c.width},
       {"ref_size", c.ref_size},
       {"kinds", kinds},
       {"subdivisions", c.subdivisions},
       {"background", c.background == BackgroundRegime::White ? "white" : "flat"},
       {"source",
        {{"yaw", interval_json(c.source.yaw)},
         {"pitch", interval_json(c.source.pitch)},
         {"d", interval_json(c.source.d)},
         {"rx", interval_json(c.source.rx)},
         {"ry", interval_json(c.source.ry)}}},
       {"perturb",
        {{"yaw", c.perturb.yaw},
         {"pitch", c.perturb.pitch},
         {"d_factor", std::exp(c.perturb.log_d)},
         {"rx", c.perturb.rx},
         {"ry", c.perturb.ry}}},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  const std::string what = "gen-data config";
  detail::reject_unknown_keys(j,
                              {"n_pairs", "height", "width", "ref_size", "kinds", "subdivisions",
                               "background", "source", "perturb", "seed"},
                              what);
  detail::read_optional(j, "n_pairs", c.n_pairs, what);
  detail::read_optional(j, "height", c.height, what);
  detail::read_optional(j, "width", c.width, what);
  detail::read_optional(j, "ref_size", c.ref_size, what);
  detail::read_optional(j, "subdivisions", c.subdivisions, what);
  detail::read_optional(j, "seed", c.seed, what);
  if (j.contains("kinds")) {
    std::vector<std::string> names;
    detail::read_optional(j, "kinds", names, what);
    c.kinds.clear();
    try {
      for (const auto& n : names) c.kinds.push_back(primitive_from_string(n));
    } catch (const BadParams& e) {
      throw ConfigError(what + ".kinds: " + e.what());
    }
  }
  if (j.contains("background")) {
    std::string bg;
    detail::read_optional(j, "background", bg, what);
    if (bg == "white") c.background = BackgroundRegime::White;
    else if (bg == "flat") c.background = BackgroundRegime::Flat;
    else throw ConfigError(what + ".background must be \"white\" or \"flat\"");
  }
  if (j.contains("source")) {
    const auto& s = j.at("source");
    detail::reject_unknown_keys(s, {"yaw", "pitch", "d", "rx", "ry"}, what + ".source");
    if (s.contains("yaw")) c.source.yaw = interval_from(s["yaw"], "source.yaw");
    if (s.contains("pitch")) c.source.pitch = interval_from(s["pitch"], "source.pitch");
    if (s.contains("d")) c.source.d = interval_from(s["d"], "source.d");
    if (s.contains("rx")) c.source.rx = interval_from(s["rx"], "source.rx");
    if (s.contains("ry")) c.source.ry = interval_from(s["ry"], "source.ry");
  }
  if (j.contains("perturb")) {
    const auto& p = j.at("perturb");
    const std::string pw = what + ".perturb";
    detail::reject_unknown_keys(p, {"yaw", "pitch", "d_factor", "rx", "ry"}, pw);
    detail::read_optional(p, "yaw", c.perturb.yaw, pw);
    detail::read_optional(p, "pitch", c.perturb.pitch, pw);
    detail::read_optional(p, "rx", c.perturb.rx, pw);
    detail::read_optional(p, "ry", c.perturb.ry, pw);
    if (p.contains("d_factor")) {
      double factor = 1.0;
      detail::read_optional(p, "d_factor", factor, pw);
      if (!(factor >= 1.0)) throw BadRanges("perturb.d_factor must be >= 1");
      c.perturb.log_d = std::log(factor);
    }
  }
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x5ce9e5u};
  return std::mt19937_64(seq);
}

SceneDraw draw_scene(const GenConfig& cfg, std::uint64_t index) {
  std::mt19937_64 rng = sample_rng(cfg.seed, index);
  SceneDraw d;
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, cfg.kinds.size() - 1)(rng);
  d.scene.object = {cfg.kinds[k], draw_params(cfg.kinds[k], rng), cfg.subdivisions};
  d.scene.mesh = d.scene.object.build();
  if (cfg.background == BackgroundRegime::White) {
    d.scene.background = Vec3::Ones();
    d.scene.tint = draw_color(rng, 0.05, 0.8);
  } else {
    d.scene.background = draw_color(rng, 0.5, 1.0);
    // Keep the object separable from the plate by the 0.1 extraction rule.
    do {
      d.scene.tint = draw_color(rng, 0.05, 0.8);
    } while (contrast(d.scene.tint, d.scene.background) < 0.2);
  }
  d.s_src = sample_source_camera(rng, cfg.source);
  d.s_tgt = sample_target_camera(d.s_src, rng, cfg.perturb, kMinTargetDistance);
  return d;
}

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = {{"id", r.id},
       {"seed", r.seed},
       {"index", r.index},
       {"object",
        {{"kind", to_string(r.object.kind)},
         {"params", r.object.params},
         {"subdivisions", r.object.subdivisions}}},
       {"tint", vec3_json(r.tint)},
       {"background", vec3_json(r.background)},
       {"s_src", r.s_src},
       {"s_tgt", r.s_tgt},
       {"f", r.f.flatten()},
       {"files",
        {{"x_src", r.x_src},
         {"x_tgt", r.x_tgt},
         {"x_bg", r.x_bg},
         {"m_src", r.m_src},
         {"m_tgt", r.m_tgt},
         {"i_ref", r.i_ref}}}};
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  try {
    r.id = j.at("id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.index = j.at("index").get<std::uint64_t>();
    const auto& o = j.at("object");
    r.object.kind = primitive_from_string(o.at("kind").get<std::string>());
    r.object.params = o.at("params").get<std::vector<double>>();
    r.object.subdivisions = o.at("subdivisions").get<int>();
    r.tint = vec3_from(j.at("tint"));
    r.background = vec3_from(j.at("background"));
    r.s_src = j.at("s_src").get<EulerCamera>();
    r.s_tgt = j.at("s_tgt").get<EulerCamera>();
    r.f = RelPoseDescriptor::from_array(j.at("f").get<std::array<double, 8>>());
    const auto& files = j.at("files");
    r.x_src = files.at("x_src").get<std::string>();
    r.x_tgt = files.at("x_tgt").get<std::string>();
    r.x_bg = files.at("x_bg").get<std::string>();
    r.m_src = files.at("m_src").get<std::string>();
    r.m_tgt = files.at("m_tgt").get<std::string>();
    r.i_ref = files.at("i_ref").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest record: ") + e.what());
  }
}

std::filesystem::path build_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto manifest = out_dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw IoError("cannot write " + manifest.string());

  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(cfg.n_pairs); ++i) {
    const SceneDraw d = draw_scene(cfg, i);
    const SamplePair p = render_pair(d.scene, d.s_src, d.s_tgt, cfg.height, cfg.width, cfg.ref_size);
    ManifestRecord rec;
    rec.id = pair_id(i);
    rec.seed = cfg.seed;
    rec.index = i;
    rec.object = d.scene.object;
    rec.tint = d.scene.tint;
    rec.background = d.scene.background;
    rec.s_src = p.s_src;
    rec.s_tgt = p.s_tgt;
    rec.f = p.f;
    const std::string dir = "pairs/" + rec.id + "/";
    rec.x_src = dir + "x_src.ppm";
    rec.x_tgt = dir + "x_tgt.ppm";
    rec.x_bg = dir + "x_bg.ppm";
    rec.m_src = dir + "m_src.pgm";
    rec.m_tgt = dir + "m_tgt.pgm";
    rec.i_ref = dir + "i_ref.ppm";
    write_ppm(out_dir / rec.x_src, p.x_src);
    write_ppm(out_dir / rec.x_tgt, p.x_tgt);
    write_ppm(out_dir / rec.x_bg, p.x_bg);
    write_mask_pgm(out_dir / rec.m_src, p.m_src);
    write_mask_pgm(out_dir / rec.m_tgt, p.m_tgt_true);
    write_ppm(out_dir / rec.i_ref, p.i_ref);
    out << nlohmann::json(rec).dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + manifest.string());
  return manifest;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

SamplePair load_pair(const ManifestRecord& rec, const std::filesystem::path& root) {
  SamplePair p;
  p.x_src = read_ppm(root / rec.x_src);
  p.x_tgt = read_ppm(root / rec.x_tgt);
  p.x_bg = read_ppm(root / rec.x_bg);
  p.m_src = read_mask_pgm(root / rec.m_src);
  p.m_tgt_true = read_mask_pgm(root / rec.m_tgt);
  p.i_ref = read_ppm(root / rec.i_ref);
  p.s_src = rec.s_src;
  p.s_tgt = rec.s_tgt;
  p.f = rec.f;
  return p;
}

}  // namespace geoedit
