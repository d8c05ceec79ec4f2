#include "geoedit/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "geoedit/errors.hpp"
#include "geoedit/silhouette.hpp"
#include "json_fields.hpp"

namespace geoedit {

namespace {

double psnr_from_mse(double mse, double peak) {
  if (mse < peak * peak * std::pow(10.0, -9.9)) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

void check_images(const RgbImage& a, const RgbImage& b, double peak) {
  if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size())
    throw ShapeMismatch("psnr: image shapes differ");
  if (!(peak > 0.0)) throw BadParams("psnr: peak must be positive");
}

}  // namespace

double psnr(const RgbImage& a, const RgbImage& b, double peak) {
  check_images(a, b, peak);
  if (a.data.empty()) return kPsnrCap;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(a.data.size()), peak);
}

double psnr_in_region(const RgbImage& a, const RgbImage& b, const BinaryMaskVolume& region,
                      double peak) {
  check_images(a, b, peak);
  if (region.height() != a.height || region.width() != a.width)
    throw ShapeMismatch("psnr_in_region: region shape differs from the images");
  double acc = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      if (!region.at(0, r, c)) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = a.at(r, c, ch) - b.at(r, c, ch);
        acc += d * d;
      }
      n += 3;
    }
  return n == 0 ? kPsnrCap : psnr_from_mse(acc / static_cast<double>(n), peak);
}

void to_json(nlohmann::json& j, const MapeFloors& f) {
  j = {{"angle_rad", f.angle}, {"shift", f.shift}, {"distance_scale", f.distance_scale},
       {"distance", 1e-3 * f.distance_scale}};
}

void from_json(const nlohmann::json& j, MapeFloors& f) {
  const std::string what = "mape floors";
  detail::reject_unknown_keys(j, {"angle_rad", "shift", "distance_scale", "distance"}, what);
  detail::read_optional(j, "angle_rad", f.angle, what);
  detail::read_optional(j, "shift", f.shift, what);
  detail::read_optional(j, "distance_scale", f.distance_scale, what);
  if (!(f.angle > 0.0 && f.shift > 0.0 && f.distance_scale > 0.0))
    throw ConfigError("mape floors must be positive");
}

PoseError pose_mape(const EulerCamera& truth, const EulerCamera& pred, const MapeFloors& floors) {
  const std::array<double, 5> diff{wrap_angle(pred.yaw() - truth.yaw()),
                                   wrap_angle(pred.pitch() - truth.pitch()),
                                   pred.distance() - truth.distance(), pred.rx() - truth.rx(),
                                   pred.ry() - truth.ry()};
  const std::array<double, 5> ref{truth.yaw(), truth.pitch(), truth.distance(), truth.rx(), truth.ry()};
  const std::array<double, 5> floor{floors.angle, floors.angle, 1e-3 * floors.distance_scale,
                                    floors.shift, floors.shift};
  PoseError e;
  for (int k = 0; k < 5; ++k) {
    e.ape[k] = 100.0 * std::abs(diff[k]) / std::max(std::abs(ref[k]), floor[k]);
    e.mape += e.ape[k] / 5.0;
  }
  return e;
}

double object_iou(const BinaryMaskVolume& pred, const BinaryMaskVolume& truth) {
  return mask_iou(pred, truth);
}

BinaryMaskVolume extract_silhouette(const RgbImage& img, const Vec3& background, double threshold) {
  BinaryMaskVolume m(1, img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double dev = 0.0;
      for (int ch = 0; ch < 3; ++ch) dev = std::max(dev, std::abs(img.at(r, c, ch) - background[ch]));
      if (dev > threshold) m.set(0, r, c, true);
    }
  return m;
}

double yaw_symmetry_period(const ObjectSpec& object) {
  switch (object.kind) {
    case PrimitiveKind::Box:
      if (object.params.size() >= 3 && std::abs(object.params[0] - object.params[2]) < 1e-9)
        return std::numbers::pi / 2.0;
      return std::numbers::pi;
    case PrimitiveKind::Cylinder:
    case PrimitiveKind::Capsule:
    case PrimitiveKind::Icosphere:
      return 0.0;
  }
  return 2.0 * std::numbers::pi;
}

EulerCamera align_yaw(const ObjectSpec& object, const EulerCamera& truth, const EulerCamera& pred) {
  const double period = yaw_symmetry_period(object);
  double yaw = truth.yaw();
  if (period > 0.0) {
    const double k = std::round(wrap_angle(truth.yaw() - pred.yaw()) / period);
    yaw = wrap_angle(pred.yaw() + k * period);
  }
  return EulerCamera::make(yaw, pred.pitch(), pred.distance(), pred.rx(), pred.ry());
}

void EvalConfig::validate() const {
  if (!(silhouette_threshold >= 0.0 && silhouette_threshold < 1.0))
    throw ConfigError("silhouette_threshold must lie in [0, 1)");
  if (!(floors.angle > 0.0 && floors.shift > 0.0 && floors.distance_scale > 0.0))
    throw ConfigError("mape floors must be positive");
  try {
    estimator.validate();
  } catch (const BadParams& e) {
    throw ConfigError(std::string("estimator: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"silhouette_threshold", c.silhouette_threshold},
       {"floors", c.floors},
       {"estimator", c.estimator},
       {"fallback", c.fallback},
       {"estimate_pose", c.estimate_pose}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  const std::string what = "eval config";
  detail::reject_unknown_keys(j, {"silhouette_threshold", "floors", "estimator", "fallback", "estimate_pose"},
                              what);
  detail::read_optional(j, "silhouette_threshold", c.silhouette_threshold, what);
  if (j.contains("floors")) c.floors = j.at("floors").get<MapeFloors>();
  if (j.contains("estimator")) c.estimator = j.at("estimator").get<EstimatorConfig>();
  if (j.contains("fallback")) {
    try {
      c.fallback = j.at("fallback").get<EulerCamera>();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("eval config: fallback: ") + e.what());
    }
  }
  detail::read_optional(j, "estimate_pose", c.estimate_pose, what);
  c.validate();
}

Aggregate aggregate(std::vector<double> xs) {
  Aggregate a;
  if (xs.empty()) return a;
  std::sort(xs.begin(), xs.end());
  double acc = 0.0;
  for (double x : xs) acc += x;
  a.mean = acc / static_cast<double>(xs.size());
  const std::size_t n = xs.size();
  a.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  return a;
}

SampleMetrics evaluate_sample(const ManifestRecord& rec, const SamplePair& pair,
                              const RgbImage& output, const EvalConfig& cfg) {
  SampleMetrics s;
  s.id = rec.id;
  s.psnr_db = psnr(output, pair.x_tgt);
  const BinaryMaskVolume pred = extract_silhouette(output, rec.background, cfg.silhouette_threshold);
  s.iou = object_iou(pred, pair.m_tgt_true);
  if (!cfg.estimate_pose) return s;
  EulerCamera cam = cfg.fallback;
  if (pred.count_ones() > 0) {
    s.estimate = estimate_camera(rec.object.build(), from_mask(pred), cfg.estimator);
    cam = s.estimate->cam;
  }
  s.pose = pose_mape(pair.s_tgt, align_yaw(rec.object, pair.s_tgt, cam), cfg.floors);
  return s;
}

EvalReport eval_report(const std::vector<ManifestRecord>& records,
                       const std::filesystem::path& dataset_root,
                       const std::filesystem::path& outputs_dir, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<const ManifestRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });

  std::string missing;
  for (const auto* r : sorted)
    if (!std::filesystem::exists(outputs_dir / (r->id + ".ppm"))) missing += (missing.empty() ? "" : ", ") + r->id;
  if (!missing.empty()) throw MissingOutput("no output for: " + missing);

  EvalReport report;
  report.floors = cfg.floors;
  std::vector<double> ps, ious, mapes;
  for (const auto* r : sorted) {
    const SamplePair pair = load_pair(*r, dataset_root);
    const RgbImage out = read_ppm(outputs_dir / (r->id + ".ppm"));
    report.samples.push_back(evaluate_sample(*r, pair, out, cfg));
    const auto& s = report.samples.back();
    ps.push_back(s.psnr_db);
    ious.push_back(s.iou);
    if (s.pose) mapes.push_back(s.pose->mape);
  }
  report.psnr_db = aggregate(ps);
  report.iou = aggregate(ious);
  report.mape = aggregate(mapes);
  return report;
}

namespace {

nlohmann::json agg_json(const Aggregate& a) { return {{"mean", a.mean}, {"median", a.median}}; }

constexpr const char* kApeNames[5] = {"ape_yaw", "ape_pitch", "ape_d", "ape_rx", "ape_ry"};

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples) {
    nlohmann::json row = {{"id", s.id}, {"psnr_db", s.psnr_db}, {"iou", s.iou}};
    if (s.pose) {
      row["mape"] = s.pose->mape;
      for (int k = 0; k < 5; ++k) row[kApeNames[k]] = s.pose->ape[k];
    }
    if (s.estimate) row["estimate"] = *s.estimate;
    samples.push_back(std::move(row));
  }
  j = {{"count", r.samples.size()},
       {"mape_units", "percent"},
       {"mape_floors", r.floors},
       {"aggregate", {{"psnr_db", agg_json(r.psnr_db)}, {"iou", agg_json(r.iou)}, {"mape", agg_json(r.mape)}}},
       {"samples", std::move(samples)}};
}

std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto json_path = dir / "report.json";
  {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << nlohmann::json(report).dump(2) << "\n";
  }
  std::ofstream csv(dir / "report.csv");
  if (!csv) throw IoError("cannot write " + (dir / "report.csv").string());
  csv.precision(10);
  csv << "id,psnr_db,iou,mape";
  for (const char* name : kApeNames) csv << "," << name;
  csv << "\n";
  for (const auto& s : report.samples) {
    csv << s.id << "," << s.psnr_db << "," << s.iou << ",";
    if (s.pose) {
      csv << s.pose->mape;
      for (double a : s.pose->ape) csv << "," << a;
    } else {
      csv << ",,,,,";
    }
    csv << "\n";
  }
  if (!csv) throw IoError("write failed for report.csv");
  return json_path;
}

}  // namespace geoedit
