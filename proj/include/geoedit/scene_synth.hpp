#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoedit/camera.hpp"
#include "geoedit/image_io.hpp"
#include "geoedit/mask.hpp"
#include "geoedit/mesh.hpp"

namespace geoedit {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
};

/// Uniform source-camera ranges. Yaw is wrapped after drawing, so any
/// interval of width <= 2 pi is accepted.
struct CameraRanges {
  Interval yaw{-3.141592653589793, 3.141592653589793};
  Interval pitch{-0.5, 0.5};
  Interval d{2.2, 3.5};
  Interval rx{-0.3, 0.3};
  Interval ry{-0.3, 0.3};

  /// Throws BadRanges naming the offending field.
  void validate() const;
  /// Camera at the center of every interval.
  EulerCamera center() const;
};

/// Half-widths of the uniform target perturbation. Distance is perturbed
/// multiplicatively: d' = d * exp(u), u ~ U(-log_d, log_d).
struct PerturbWidths {
  double yaw = 0.7853981633974483;    // 45 deg
  double pitch = 0.2617993877991494;  // 15 deg
  double log_d = 0.22314355131420976;  // x[0.8, 1.25]
  double rx = 0.4;
  double ry = 0.4;
};

EulerCamera sample_source_camera(std::mt19937_64& rng, const CameraRanges& ranges);

/// Perturbs src, wraps yaw, clamps pitch and shifts into their invariants and
/// d to at least min_d.
EulerCamera sample_target_camera(const EulerCamera& src, std::mt19937_64& rng,
                                 const PerturbWidths& perturb, double min_d);

struct ObjectSpec {
  PrimitiveKind kind = PrimitiveKind::Box;
  std::vector<double> params;
  int subdivisions = 2;

  TriangleMesh build() const;
};

struct ToyScene {
  ObjectSpec object;
  TriangleMesh mesh;
  Vec3 tint = Vec3::Constant(0.5);
  Vec3 background = Vec3::Ones();
};

struct SamplePair {
  RgbImage x_src, x_tgt;
  RgbImage x_bg;  // background plate; empty when unavailable
  BinaryMaskVolume m_src, m_tgt_true;
  EulerCamera s_src, s_tgt;
  RelPoseDescriptor f;
  RgbImage i_ref;

  bool has_background() const { return x_bg.height > 0; }
};

/// Flat-shaded render: background everywhere, tint * (0.4 + 0.6 max(0, n.l))
/// inside the hard silhouette with l = normalize(1, 1, 1). The visible face
/// per pixel is picked by a depth test; coverage itself matches render_hard.
RgbImage render_shaded(const ToyScene& scene, const EulerCamera& cam, int height, int width);

/// Bilinear resample of the tight object box of `mask` in `img` to size x
/// size. All-background image when the mask is empty.
RgbImage reference_crop(const RgbImage& img, const BinaryMaskVolume& mask, int size,
                        const Vec3& background);

SamplePair render_pair(const ToyScene& scene, const EulerCamera& s_src, const EulerCamera& s_tgt,
                       int height, int width, int ref_size = 32);

enum class BackgroundRegime { White, Flat };

/// Everything needed to regenerate a dataset bit for bit.
struct GenConfig {
  int n_pairs = 100;
  int height = 64;
  int width = 64;
  int ref_size = 32;
  std::vector<PrimitiveKind> kinds{PrimitiveKind::Box, PrimitiveKind::Cylinder,
                                   PrimitiveKind::Capsule};
  int subdivisions = 2;
  BackgroundRegime background = BackgroundRegime::White;
  CameraRanges source;
  PerturbWidths perturb;
  std::uint64_t seed = 0;

  /// Throws ConfigError / BadRanges.
  void validate() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
/// Unknown keys throw ConfigError.
void from_json(const nlohmann::json& j, GenConfig& c);

/// Independent random stream for one sample: depends only on (seed, index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

/// Draws the object, tint, background and both cameras of sample `index`.
struct SceneDraw {
  ToyScene scene;
  EulerCamera s_src, s_tgt;
};
SceneDraw draw_scene(const GenConfig& cfg, std::uint64_t index);

/// One manifest line. Paths are relative to the manifest's directory.
struct ManifestRecord {
  std::string id;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  ObjectSpec object;
  Vec3 tint = Vec3::Zero();
  Vec3 background = Vec3::Ones();
  EulerCamera s_src, s_tgt;
  RelPoseDescriptor f;
  std::string x_src, x_tgt, x_bg, m_src, m_tgt, i_ref;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

/// Writes <out>/manifest.jsonl and <out>/pairs/<id>/*. Returns the manifest
/// path. Throws IoError.
std::filesystem::path build_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& manifest);
/// Reads the images of one record (8-bit quantized, as stored).
SamplePair load_pair(const ManifestRecord& rec, const std::filesystem::path& root);

}  // namespace geoedit
