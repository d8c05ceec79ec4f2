#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "geoedit/conditioning.hpp"
#include "geoedit/scene_synth.hpp"

namespace geoedit {

// ---------------------------------------------------------------------------
// Flow-matching algebra

struct FlowSample {
  LatentGrid z0, eps, zt, v_star;
  double t = 0.0;
};

/// Draws eps ~ N(0, I) and fills zt = (1 - t) z0 + t eps, v* = eps - z0.
/// Throws BadParams when t is outside [0, 1].
FlowSample make_flow_sample(const LatentGrid& z0, std::mt19937_64& rng, double t);

/// Mean squared elementwise difference. Throws ShapeMismatch.
double fm_loss(const LatentGrid& pred_v, const FlowSample& sample);

/// Categorical draw proportional to (main, aux1, aux2). Weights must be
/// non-negative with a positive sum (BadParams).
Task sample_task(std::mt19937_64& rng, const std::array<double, 3>& weights);

// ---------------------------------------------------------------------------
// Toy velocity network

struct NetConfig {
  int latent_channels = 48;  // 3 * stride^2
  int mask_channels = 16;    // stride^2
  int ref_channels = 48;
  int hidden = 64;
  int control = 64;
  int blocks = 4;
  int t_freqs = 6;
  PoseEncoderConfig pose;

  int spatial_channels() const { return latent_channels + 2 * mask_channels; }
  /// Throws ConfigError.
  void validate() const;
  /// Shapes implied by the toy encoder at `stride`.
  static NetConfig for_stride(int stride);
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  bool backbone = false;
};

/// Network inputs for B examples on an h x w latent grid. Spatial tensors
/// are channel x (B h w) with column index b h w + r w + c.
template <typename S>
struct NetBatch {
  int batch = 0, height = 0, width = 0;
  Mat<S> zt;       // latent_channels x N
  Mat<S> spatial;  // spatial_channels x N: source latent, source code, target code
  Mat<S> ref;      // ref_channels x B, reference latent averaged over cells
  std::vector<double> t;
  std::vector<std::array<double, 8>> descriptor;
  std::vector<bool> pose_dropped;

  int cells() const { return height * width; }
};

/// Packs tuples and noisy latents into one batch. Throws ShapeMismatch when
/// the slots disagree with each other or with cfg.
template <typename S>
NetBatch<S> make_batch(const NetConfig& cfg, const std::vector<const ConditioningTuple*>& conds,
                       const std::vector<const LatentGrid*>& zt, const std::vector<double>& t);

template <typename S>
Mat<S> latent_to_matrix(const std::vector<const LatentGrid*>& grids);

/// Backbone: per-cell residual MLP over the latent grid with a Fourier time
/// embedding. Control branch: two 3x3 convolutions over the concatenated
/// spatial slots plus a projection of the flattened pose tokens and the
/// pooled reference, injected after every backbone block through
/// zero-initialized maps.
template <typename S>
class VelocityNet {
 public:
  VelocityNet() = default;
  /// Fresh network; every control injection map starts at zero.
  static VelocityNet init(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  std::vector<Param<S>>& params() { return params_; }
  const std::vector<Param<S>>& params() const { return params_; }
  /// Throws BadParams for an unknown name.
  Param<S>& param(const std::string& name);
  const Param<S>& param(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Throws ShapeMismatch.
  Mat<S> forward(const NetBatch<S>& batch) const;

  /// Mean fm loss over all elements of the batch and, when grads is given,
  /// its gradient for every parameter (same order as params()). With
  /// freeze_backbone the backbone slots are left at zero. per_example, when
  /// given, receives each example's own mean loss. Throws NonFinite.
  double loss_and_grad(const NetBatch<S>& batch, const Mat<S>& v_star, std::vector<Mat<S>>* grads,
                       bool freeze_backbone = false, std::vector<double>* per_example = nullptr) const;

  /// Copy of the pose-encoder weights in double precision.
  PoseEncoder pose_encoder() const;

  template <typename T>
  VelocityNet<T> cast() const {
    VelocityNet<T> out;
    out.cfg_ = cfg_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<T>(), p.backbone});
    return out;
  }

 private:
  template <typename>
  friend class VelocityNet;
  struct Cache;
  Mat<S> run(const NetBatch<S>& batch, Cache* cache) const;
  int index(const std::string& name) const;

  NetConfig cfg_;
  std::vector<Param<S>> params_;
};

extern template class VelocityNet<float>;
extern template class VelocityNet<double>;

struct GradCheckResult {
  int checked = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
};

/// Compares loss_and_grad against central differences on `n_probes`
/// randomly chosen scalar parameters.
GradCheckResult gradient_check(VelocityNet<double>& net, const NetBatch<double>& batch,
                               const Mat<double>& v_star, int n_probes, std::mt19937_64& rng,
                               double h = 1e-6);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::array<double, 3> task_weights{8.0, 1.0, 1.0};
  int steps = 20000;
  double lr = 1e-3;
  int batch_size = 8;
  int stage = 1;
  double dropout = 0.1;
  double grad_clip = 1.0;
  double pct_start = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One-Cycle schedule: cosine warm-up from lr/25 to lr over pct_start of the
/// run, then cosine decay to lr/1e4.
double one_cycle_lr(const TrainConfig& cfg, int step);

/// Training pair held as 8-bit images and bit masks.
struct CompactPair {
  int height = 0, width = 0, ref_size = 0;
  std::vector<std::uint8_t> x_src, x_tgt, x_bg, i_ref;
  BinaryMaskVolume m_src, m_tgt_true;
  EulerCamera s_src, s_tgt;
  RelPoseDescriptor f;

  static CompactPair from(const SamplePair& p);
  SamplePair expand() const;
};

std::vector<CompactPair> load_training_set(const std::vector<ManifestRecord>& records,
                                           const std::filesystem::path& root);

struct TraceRow {
  int step;
  Task task;
  double loss;
};

struct TrainResult {
  std::vector<double> step_loss;  // batch-mean loss per step
  std::vector<TraceRow> trace;    // per step and task present in the batch
};

/// Stage 2 leaves every backbone parameter untouched. Throws NonFinite with
/// the step index, BadParams on an empty dataset.
TrainResult train(VelocityNet<float>& net, const std::vector<CompactPair>& data,
                  const TrainConfig& cfg, int stride = 4,
                  const std::function<void(int, double)>& on_step = {});

void write_trace_csv(const std::filesystem::path& path, const TrainResult& result);

/// Mean of step_loss over [center - half, center + half], clipped to the run.
double smoothed_loss(const std::vector<double>& step_loss, int center, int half = 100);

// ---------------------------------------------------------------------------
// Sampling

using VelocityFn = std::function<LatentGrid(const LatentGrid& z, double t)>;

/// Euler integration from t = 1 (z1) to t = 0 in `steps` equal steps.
/// Throws BadParams when steps < 1 and NonFinite on overflow.
LatentGrid euler_integrate(const VelocityFn& v, LatentGrid z1, int steps);

/// Samples eps from rng and integrates the network velocity; with guidance
/// g != 1 uses v_null + g (v_cond - v_null), v_null being the pose-dropped
/// condition.
template <typename S>
LatentGrid euler_sample(const VelocityNet<S>& net, const ConditioningTuple& cond, int steps,
                        std::mt19937_64& rng, double guidance = 1.5);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Header: magic "GEOEDCKP", u32 version, u64 FNV-1a digest of the config
/// JSON, u32 length + config JSON, u32 parameter count; then per parameter
/// u32 name length, name, u32 rows, u32 cols and rows*cols little-endian
/// float32 values in row-major order, in params() order.
void save_checkpoint(const std::filesystem::path& path, const VelocityNet<float>& net,
                     const nlohmann::json& meta = nlohmann::json::object());
/// Throws IoError (unreadable / truncated) or IncompatibleCheckpoint.
VelocityNet<float> load_checkpoint(const std::filesystem::path& path,
                                   nlohmann::json* meta = nullptr);

std::uint64_t config_digest(const NetConfig& cfg);

}  // namespace geoedit
