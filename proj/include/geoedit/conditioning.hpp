#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geoedit/camera.hpp"
#include "geoedit/image_io.hpp"
#include "geoedit/mask.hpp"
#include "geoedit/scene_synth.hpp"

namespace geoedit {

/// (x, sin(x), cos(x), sin(2x), cos(2x), ..., sin(2^{n-1} x), cos(2^{n-1} x)).
/// Throws BadParams when n_freqs < 1.
Eigen::VectorXd fourier_encode(double x, int n_freqs);

/// C x H' x W' latent, row-major per channel.
struct LatentGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> data;

  double& at(int ch, int r, int c) {
    return data[(static_cast<std::size_t>(ch) * height + r) * width + c];
  }
  double at(int ch, int r, int c) const {
    return data[(static_cast<std::size_t>(ch) * height + r) * width + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const LatentGrid& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const LatentGrid&) const = default;
};

/// Affine constants of the toy encoder: latent = (pixel - shift) / scale.
inline constexpr double kLatentShift = 0.5;
inline constexpr double kLatentScale = 0.5;

/// Space-to-depth by `stride`, channel = (dy * stride + dx) * 3 + color,
/// followed by the fixed affine normalization. Throws ShapeMismatch.
LatentGrid toy_encode(const RgbImage& image, int stride = 4);
/// Exact inverse of toy_encode (no clamping).
RgbImage toy_decode(const LatentGrid& latent);

struct PoseTokens {
  Eigen::MatrixXd tokens;  // 8 x D, row i encodes descriptor component i
  bool operator==(const PoseTokens& o) const { return tokens == o.tokens; }
};

struct PoseEncoderConfig {
  int n_freqs = 6;
  int width = 64;
  int input_size() const { return 2 * n_freqs + 1; }
};

/// token_i = MLP(fourier_encode(f_i)) + embed_i with a 3-layer SiLU MLP
/// shared across components. null holds the learned "no camera" tokens.
struct PoseEncoder {
  PoseEncoderConfig cfg;
  Eigen::MatrixXd w1, w2, w3;  // D x in, D x D, D x D
  Eigen::VectorXd b1, b2, b3;
  Eigen::MatrixXd embed;       // D x 8
  Eigen::MatrixXd null;        // D x 8

  static PoseEncoder zeros(const PoseEncoderConfig& cfg);
  /// Gaussian weights with fan-in scaling; embeddings and null ~ N(0, 0.1^2).
  static PoseEncoder random(const PoseEncoderConfig& cfg, std::mt19937_64& rng);

  /// Throws ShapeMismatch when the weights disagree with cfg.
  PoseTokens encode(const RelPoseDescriptor& f) const;
  PoseTokens null_tokens() const;
};

enum class Task { Main, Aux1Removal, Aux2RefInpaint };

std::string to_string(Task task);
/// Accepts main/manipulate, aux1/removal, aux2/inpaint. Throws ConfigError.
Task task_from_string(const std::string& name);

struct ConditioningTuple {
  Task task = Task::Main;
  LatentGrid src_latent;
  LatentGrid ref_latent;
  MaskCode src_mask_code;
  MaskCode tgt_mask_code;
  RelPoseDescriptor descriptor;  // what the pose tokens encode
  PoseTokens pose_tokens;
  bool pose_dropped = false;
};

/// Builds the task-specific tuple. Main and Aux2 use the estimated target
/// mask; Aux1 uses a white reference, a zero target mask and the out-of-frame
/// pose. Throws MissingBackground for aux tasks without a plate.
ConditioningTuple assemble_conditioning(const SamplePair& pair, Task task,
                                        const PoseEncoder& encoder, int stride = 4);

/// With probability p swaps the pose tokens for the encoder's null tokens.
ConditioningTuple drop_camera_condition(ConditioningTuple tuple, std::mt19937_64& rng, double p,
                                        const PoseEncoder& encoder);

}  // namespace geoedit
