#include "geoedit/conditioning.hpp"

#include <cmath>

#include "geoedit/errors.hpp"

namespace geoedit {
namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

Eigen::MatrixXd gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

RgbImage constant_image(int h, int w, const Vec3& color) {
  RgbImage img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
  return img;
}

MaskCode zero_code_like(const MaskCode& like) {
  MaskCode z = like;
  std::fill(z.data.begin(), z.data.end(), 0);
  return z;
}

}  // namespace

Eigen::VectorXd fourier_encode(double x, int n_freqs) {
  if (n_freqs < 1) throw BadParams("fourier_encode needs n_freqs >= 1");
  Eigen::VectorXd out(2 * n_freqs + 1);
  out[0] = x;
  double freq = 1.0;
  for (int k = 0; k < n_freqs; ++k, freq *= 2.0) {
    out[1 + 2 * k] = std::sin(freq * x);
    out[2 + 2 * k] = std::cos(freq * x);
  }
  return out;
}

LatentGrid toy_encode(const RgbImage& image, int stride) {
  if (stride < 1 || image.height % stride || image.width % stride)
    throw ShapeMismatch("toy_encode: image " + std::to_string(image.height) + "x" +
                        std::to_string(image.width) + " not divisible by stride " +
                        std::to_string(stride));
  LatentGrid g;
  g.channels = 3 * stride * stride;
  g.height = image.height / stride;
  g.width = image.width / stride;
  g.stride = stride;
  g.data.resize(image.data.size());
  for (int dy = 0; dy < stride; ++dy)
    for (int dx = 0; dx < stride; ++dx)
      for (int color = 0; color < 3; ++color) {
        const int ch = (dy * stride + dx) * 3 + color;
        for (int r = 0; r < g.height; ++r)
          for (int c = 0; c < g.width; ++c)
            g.at(ch, r, c) =
                (image.at(r * stride + dy, c * stride + dx, color) - kLatentShift) / kLatentScale;
      }
  return g;
}

RgbImage toy_decode(const LatentGrid& g) {
  const int s = g.stride;
  if (g.channels != 3 * s * s) throw ShapeMismatch("toy_decode: channels != 3 * stride^2");
  RgbImage img(g.height * s, g.width * s);
  for (int dy = 0; dy < s; ++dy)
    for (int dx = 0; dx < s; ++dx)
      for (int color = 0; color < 3; ++color) {
        const int ch = (dy * s + dx) * 3 + color;
        for (int r = 0; r < g.height; ++r)
          for (int c = 0; c < g.width; ++c)
            img.at(r * s + dy, c * s + dx, color) = g.at(ch, r, c) * kLatentScale + kLatentShift;
      }
  return img;
}

PoseEncoder PoseEncoder::zeros(const PoseEncoderConfig& cfg) {
  PoseEncoder e;
  e.cfg = cfg;
  const int d = cfg.width, in = cfg.input_size();
  e.w1 = Eigen::MatrixXd::Zero(d, in);
  e.w2 = Eigen::MatrixXd::Zero(d, d);
  e.w3 = Eigen::MatrixXd::Zero(d, d);
  e.b1 = e.b2 = e.b3 = Eigen::VectorXd::Zero(d);
  e.embed = Eigen::MatrixXd::Zero(d, 8);
  e.null = Eigen::MatrixXd::Zero(d, 8);
  return e;
}

PoseEncoder PoseEncoder::random(const PoseEncoderConfig& cfg, std::mt19937_64& rng) {
  PoseEncoder e = zeros(cfg);
  const int d = cfg.width, in = cfg.input_size();
  e.w1 = gaussian(d, in, 1.0 / std::sqrt(in), rng);
  e.w2 = gaussian(d, d, 1.0 / std::sqrt(d), rng);
  e.w3 = gaussian(d, d, 1.0 / std::sqrt(d), rng);
  e.embed = gaussian(d, 8, 0.1, rng);
  e.null = gaussian(d, 8, 0.1, rng);
  return e;
}

PoseTokens PoseEncoder::encode(const RelPoseDescriptor& f) const {
  const int d = cfg.width, in = cfg.input_size();
  if (w1.rows() != d || w1.cols() != in || w2.rows() != d || w2.cols() != d || w3.rows() != d ||
      w3.cols() != d || b1.size() != d || b2.size() != d || b3.size() != d ||
      embed.rows() != d || embed.cols() != 8 || null.rows() != d || null.cols() != 8)
    throw ShapeMismatch("pose encoder weights do not match its config");
  const auto flat = f.flatten();
  PoseTokens t;
  t.tokens.resize(8, d);
  for (int i = 0; i < 8; ++i) {
    const Eigen::VectorXd a1 = (w1 * fourier_encode(flat[i], cfg.n_freqs) + b1).unaryExpr(&silu);
    const Eigen::VectorXd a2 = (w2 * a1 + b2).unaryExpr(&silu);
    t.tokens.row(i) = (w3 * a2 + b3 + embed.col(i)).transpose();
  }
  return t;
}

PoseTokens PoseEncoder::null_tokens() const { return {null.transpose()}; }

std::string to_string(Task task) {
  switch (task) {
    case Task::Main: return "main";
    case Task::Aux1Removal: return "aux1";
    case Task::Aux2RefInpaint: return "aux2";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  if (name == "main" || name == "manipulate") return Task::Main;
  if (name == "aux1" || name == "removal") return Task::Aux1Removal;
  if (name == "aux2" || name == "inpaint") return Task::Aux2RefInpaint;
  throw ConfigError("unknown task '" + name + "' (expected manipulate, removal or inpaint)");
}

ConditioningTuple assemble_conditioning(const SamplePair& pair, Task task,
                                        const PoseEncoder& encoder, int stride) {
  if (task != Task::Main && !pair.has_background())
    throw MissingBackground(to_string(task) + " needs a background plate");
  ConditioningTuple c;
  c.task = task;
  const MaskCode src_code = pixel_unshuffle(pair.m_src, stride, 1);
  auto estimated_target = [&] {
    return pixel_unshuffle(estimate_target_mask(pair.m_src, pair.f, pair.s_src.distance(),
                                                pair.s_tgt.distance()),
                           stride, 1);
  };
  switch (task) {
    case Task::Main:
      c.src_latent = toy_encode(pair.x_src, stride);
      c.ref_latent = toy_encode(pair.i_ref, stride);
      c.src_mask_code = src_code;
      c.tgt_mask_code = estimated_target();
      c.descriptor = pair.f;
      break;
    case Task::Aux1Removal:
      c.src_latent = toy_encode(pair.x_src, stride);
      c.ref_latent = toy_encode(constant_image(pair.i_ref.height, pair.i_ref.width, Vec3::Ones()),
                                stride);
      c.src_mask_code = src_code;
      c.tgt_mask_code = zero_code_like(src_code);
      c.descriptor = build_outofframe_descriptor(pair.s_src);
      break;
    case Task::Aux2RefInpaint:
      c.src_latent = toy_encode(pair.x_bg, stride);
      c.ref_latent = toy_encode(pair.i_ref, stride);
      c.src_mask_code = zero_code_like(src_code);
      c.tgt_mask_code = estimated_target();
      c.descriptor = pair.f;
      break;
  }
  c.pose_tokens = encoder.encode(c.descriptor);
  return c;
}

ConditioningTuple drop_camera_condition(ConditioningTuple tuple, std::mt19937_64& rng, double p,
                                        const PoseEncoder& encoder) {
  if (!(p >= 0.0 && p <= 1.0)) throw BadParams("drop probability must lie in [0, 1]");
  // Always consume one draw so the stream position does not depend on p.
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < p) {
    tuple.pose_tokens = encoder.null_tokens();
    tuple.pose_dropped = true;
  }
  return tuple;
}

}  // namespace geoedit
