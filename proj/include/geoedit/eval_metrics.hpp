#pragma once

#include <array>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoedit/camera.hpp"
#include "geoedit/image_io.hpp"
#include "geoedit/mask.hpp"
#include "geoedit/pose_estimator.hpp"
#include "geoedit/scene_synth.hpp"

namespace geoedit {

/// 10 log10(peak^2 / MSE), capped at 99 dB when MSE < peak^2 10^-9.9.
/// Throws ShapeMismatch, BadParams when peak <= 0.
double psnr(const RgbImage& a, const RgbImage& b, double peak = 1.0);
/// PSNR restricted to the pixels set in frame 0 of `region` (99 dB when
/// the region is empty).
double psnr_in_region(const RgbImage& a, const RgbImage& b, const BinaryMaskVolume& region,
                      double peak = 1.0);

inline constexpr double kPsnrCap = 99.0;

/// Denominator floors for the absolute percentage errors.
struct MapeFloors {
  double angle = std::numbers::pi / 180.0;  // 1 degree
  double shift = 1e-3;                      // NDC units
  double distance_scale = 1.0;              // d floor = 1e-3 * distance_scale
};

void to_json(nlohmann::json& j, const MapeFloors& f);
void from_json(const nlohmann::json& j, MapeFloors& f);

/// Absolute percentage errors in percent, order yaw, pitch, d, r_x, r_y.
struct PoseError {
  std::array<double, 5> ape{};
  double mape = 0.0;
};

/// APE_k = 100 |pred_k - truth_k| / max(|truth_k|, floor_k); angle
/// differences are wrapped to (-pi, pi].
PoseError pose_mape(const EulerCamera& truth, const EulerCamera& pred, const MapeFloors& floors = {});

/// mask_iou on frame-aligned binary masks. Throws ShapeMismatch.
double object_iou(const BinaryMaskVolume& pred, const BinaryMaskVolume& truth);

/// Object pixels: max-channel |img - background| > threshold.
BinaryMaskVolume extract_silhouette(const RgbImage& img, const Vec3& background,
                                    double threshold = 0.1);

/// Smallest yaw rotation (radians, > 0) mapping the object onto itself, or 0
/// for objects symmetric under every rotation about the vertical axis.
double yaw_symmetry_period(const ObjectSpec& object);

/// pred with its yaw replaced by the symmetry-equivalent value closest to
/// truth.yaw().
EulerCamera align_yaw(const ObjectSpec& object, const EulerCamera& truth, const EulerCamera& pred);

struct EvalConfig {
  double silhouette_threshold = 0.1;
  MapeFloors floors;
  EstimatorConfig estimator;
  EulerCamera fallback = CameraRanges{}.center();  // predicted camera for empty outputs
  bool estimate_pose = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct SampleMetrics {
  std::string id;
  double psnr_db = 0.0;
  double iou = 0.0;
  std::optional<PoseError> pose;         // absent when pose evaluation is disabled
  std::optional<PoseEstimate> estimate;  // absent for empty outputs or when disabled
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
};

/// Mean and median of xs taken in sorted order; zeros for an empty input.
Aggregate aggregate(std::vector<double> xs);

struct EvalReport {
  std::vector<SampleMetrics> samples;  // sorted by id
  Aggregate psnr_db, iou, mape;  // mape over samples with a pose error
  MapeFloors floors;
};

/// Scores one generated image against its pair.
SampleMetrics evaluate_sample(const ManifestRecord& rec, const SamplePair& pair,
                              const RgbImage& output, const EvalConfig& cfg);

/// Expects outputs_dir/<id>.ppm for every record. Throws MissingOutput
/// naming all absent ids.
EvalReport eval_report(const std::vector<ManifestRecord>& records,
                       const std::filesystem::path& dataset_root,
                       const std::filesystem::path& outputs_dir, const EvalConfig& cfg);

void to_json(nlohmann::json& j, const EvalReport& r);

/// Writes report.json and report.csv into dir; returns the JSON path.
std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace geoedit
