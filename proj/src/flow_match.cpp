#include "geoedit/flow_match.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "geoedit/errors.hpp"
#include "json_fields.hpp"

namespace geoedit {

// ---------------------------------------------------------------------------
// Flow-matching algebra

FlowSample make_flow_sample(const LatentGrid& z0, std::mt19937_64& rng, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw BadParams("flow time must lie in [0, 1]");
  FlowSample s;
  s.t = t;
  s.z0 = z0;
  s.eps = z0;
  s.zt = z0;
  s.v_star = z0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& e : s.eps.data) e = normal(rng);
  for (std::size_t i = 0; i < z0.data.size(); ++i) {
    s.zt.data[i] = (1.0 - t) * z0.data[i] + t * s.eps.data[i];
    s.v_star.data[i] = s.eps.data[i] - z0.data[i];
  }
  return s;
}

double fm_loss(const LatentGrid& pred_v, const FlowSample& sample) {
  if (!pred_v.same_shape(sample.v_star)) throw ShapeMismatch("fm_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_v.data.size(); ++i) {
    const double d = pred_v.data[i] - sample.v_star.data[i];
    acc += d * d;
  }
  return pred_v.data.empty() ? 0.0 : acc / static_cast<double>(pred_v.data.size());
}

Task sample_task(std::mt19937_64& rng, const std::array<double, 3>& w) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw BadParams("task weights must be finite and >= 0");
    total += x;
  }
  if (!(total > 0.0)) throw BadParams("task weights must have a positive sum");
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  constexpr Task kTasks[3] = {Task::Main, Task::Aux1Removal, Task::Aux2RefInpaint};
  double cum = 0.0;
  int last = 0;
  for (int k = 0; k < 3; ++k) {
    if (w[k] <= 0.0) continue;
    last = k;
    cum += w[k];
    if (u < cum) return kTasks[k];
  }
  return kTasks[last];
}

// ---------------------------------------------------------------------------
// Configs

void NetConfig::validate() const {
  if (latent_channels < 1 || mask_channels < 1 || ref_channels < 1 || hidden < 1 || control < 1 ||
      blocks < 1 || t_freqs < 1 || pose.n_freqs < 1 || pose.width < 1)
    throw ConfigError("network dimensions must be positive");
}

NetConfig NetConfig::for_stride(int stride) {
  NetConfig c;
  c.latent_channels = 3 * stride * stride;
  c.mask_channels = stride * stride;
  c.ref_channels = 3 * stride * stride;
  return c;
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"latent_channels", c.latent_channels}, {"mask_channels", c.mask_channels},
       {"ref_channels", c.ref_channels},       {"hidden", c.hidden},
       {"control", c.control},                 {"blocks", c.blocks},
       {"t_freqs", c.t_freqs},                 {"pose_freqs", c.pose.n_freqs},
       {"token_width", c.pose.width}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  const std::string what = "network config";
  detail::reject_unknown_keys(j,
                              {"latent_channels", "mask_channels", "ref_channels", "hidden",
                               "control", "blocks", "t_freqs", "pose_freqs", "token_width"},
                              what);
  detail::read_optional(j, "latent_channels", c.latent_channels, what);
  detail::read_optional(j, "mask_channels", c.mask_channels, what);
  detail::read_optional(j, "ref_channels", c.ref_channels, what);
  detail::read_optional(j, "hidden", c.hidden, what);
  detail::read_optional(j, "control", c.control, what);
  detail::read_optional(j, "blocks", c.blocks, what);
  detail::read_optional(j, "t_freqs", c.t_freqs, what);
  detail::read_optional(j, "pose_freqs", c.pose.n_freqs, what);
  detail::read_optional(j, "token_width", c.pose.width, what);
  c.validate();
}

void TrainConfig::validate() const {
  double total = 0.0;
  for (double w : task_weights) {
    if (!(w >= 0.0)) throw ConfigError("task_weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("task_weights must have a positive sum");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("dropout must lie in [0, 1]");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0 (0 disables)");
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("pct_start must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"task_weights", c.task_weights}, {"steps", c.steps},         {"lr", c.lr},
       {"batch_size", c.batch_size},     {"stage", c.stage},         {"dropout", c.dropout},
       {"grad_clip", c.grad_clip},       {"pct_start", c.pct_start}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const std::string what = "train config";
  detail::reject_unknown_keys(j,
                              {"task_weights", "steps", "lr", "batch_size", "stage", "dropout",
                               "grad_clip", "pct_start", "seed"},
                              what);
  detail::read_optional(j, "task_weights", c.task_weights, what);
  detail::read_optional(j, "steps", c.steps, what);
  detail::read_optional(j, "lr", c.lr, what);
  detail::read_optional(j, "batch_size", c.batch_size, what);
  detail::read_optional(j, "stage", c.stage, what);
  detail::read_optional(j, "dropout", c.dropout, what);
  detail::read_optional(j, "grad_clip", c.grad_clip, what);
  detail::read_optional(j, "pct_start", c.pct_start, what);
  detail::read_optional(j, "seed", c.seed, what);
}

// ---------------------------------------------------------------------------
// Network

namespace {

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <typename S>
Mat<S> silu_grad(const Mat<S>& x) {
  const auto sig = (S(1) / (S(1) + (-x.array()).exp())).eval();
  return (sig * (S(1) + x.array() * (S(1) - sig))).matrix();
}

// 3x3 zero-padded neighbourhoods: block j = (dy + 1) * 3 + (dx + 1) of
// column (b, r, c) holds X at (b, r + dy, c + dx).
template <typename S>
void im2col3(const Mat<S>& x, int batch, int h, int w, Mat<S>& k) {
  const int cin = static_cast<int>(x.rows());
  const int hw = h * w;
  k.setZero(9 * cin, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int col = b * hw + r * w + c;
        for (int j = 0; j < 9; ++j) {
          const int rr = r + j / 3 - 1, cc = c + j % 3 - 1;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          k.block(j * cin, col, cin, 1) = x.col(b * hw + rr * w + cc);
        }
      }
}

template <typename S>
void col2im3(const Mat<S>& dk, int cin, int batch, int h, int w, Mat<S>& dx) {
  const int hw = h * w;
  dx.setZero(cin, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int col = b * hw + r * w + c;
        for (int j = 0; j < 9; ++j) {
          const int rr = r + j / 3 - 1, cc = c + j % 3 - 1;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          dx.col(b * hw + rr * w + cc) += dk.block(j * cin, col, cin, 1);
        }
      }
}

// a (rows x B*hw) += g (rows x B), one column of g per example.
template <typename S>
void add_per_example(Mat<S>& a, const Mat<S>& g, int hw) {
  for (Eigen::Index b = 0; b < g.cols(); ++b) a.middleCols(b * hw, hw).colwise() += g.col(b);
}

template <typename S>
Mat<S> sum_per_example(const Mat<S>& a, int batch, int hw) {
  Mat<S> out(a.rows(), batch);
  for (int b = 0; b < batch; ++b) out.col(b) = a.middleCols(static_cast<Eigen::Index>(b) * hw, hw).rowwise().sum();
  return out;
}

template <typename S>
Mat<S> gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Mat<S> m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(n(rng));
  return m;
}

std::string block_name(int k, const char* leaf) { return "block" + std::to_string(k) + "." + leaf; }

}  // namespace

template <typename S>
struct VelocityNet<S>::Cache {
  Mat<S> te_in, te1, te;
  Mat<S> enc_in, e1, a1, e2, a2;
  Mat<S> tokens_flat;  // 8D x B
  Mat<S> k1, c1, k2, c2, cf;
  std::vector<Mat<S>> h, a, s;
};

template <typename S>
VelocityNet<S> VelocityNet<S>::init(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  VelocityNet net;
  net.cfg_ = cfg;
  const int C = cfg.latent_channels, H = cfg.hidden, Hc = cfg.control, D = cfg.pose.width;
  const int T = 2 * cfg.t_freqs + 1, E = cfg.pose.input_size();
  auto add = [&](std::string name, Mat<S> v, bool backbone) {
    net.params_.push_back({std::move(name), std::move(v), backbone});
  };
  auto fan_in = [&](int rows, int cols) { return gaussian<S>(rows, cols, 1.0 / std::sqrt(cols), rng); };
  auto zeros = [](int rows, int cols) { return Mat<S>::Zero(rows, cols).eval(); };

  add("in.w", fan_in(H, C), true);
  add("in.b", zeros(H, 1), true);
  add("temb.w", fan_in(H, T), true);
  add("temb.b", zeros(H, 1), true);
  for (int k = 0; k < cfg.blocks; ++k) {
    add(block_name(k, "w1"), fan_in(H, H), true);
    add(block_name(k, "b1"), zeros(H, 1), true);
    add(block_name(k, "u"), fan_in(H, H), true);
    add(block_name(k, "w2"), gaussian<S>(H, H, 0.5 / std::sqrt(H), rng), true);
    add(block_name(k, "b2"), zeros(H, 1), true);
  }
  add("out.w", fan_in(C, H), true);
  add("out.b", zeros(C, 1), true);

  add("pose.w1", fan_in(D, E), false);
  add("pose.b1", zeros(D, 1), false);
  add("pose.w2", fan_in(D, D), false);
  add("pose.b2", zeros(D, 1), false);
  add("pose.w3", fan_in(D, D), false);
  add("pose.b3", zeros(D, 1), false);
  add("pose.embed", gaussian<S>(D, 8, 0.1, rng), false);
  add("pose.null", gaussian<S>(D, 8, 0.1, rng), false);
  add("cond.pose", fan_in(Hc, 8 * D), false);
  add("cond.ref", fan_in(Hc, cfg.ref_channels), false);
  add("cond.b", zeros(Hc, 1), false);
  add("ctrl.conv1.w", fan_in(Hc, 9 * cfg.spatial_channels()), false);
  add("ctrl.conv1.b", zeros(Hc, 1), false);
  add("ctrl.conv2.w", fan_in(Hc, 9 * Hc), false);
  add("ctrl.conv2.b", zeros(Hc, 1), false);
  for (int k = 0; k < cfg.blocks; ++k) add(block_name(k, "zero"), zeros(H, Hc), false);
  return net;
}

template <typename S>
int VelocityNet<S>::index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  throw BadParams("no parameter named " + name);
}

template <typename S>
Param<S>& VelocityNet<S>::param(const std::string& name) {
  return params_[index(name)];
}

template <typename S>
const Param<S>& VelocityNet<S>::param(const std::string& name) const {
  return params_[index(name)];
}

template <typename S>
std::size_t VelocityNet<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename S>
PoseEncoder VelocityNet<S>::pose_encoder() const {
  PoseEncoder e;
  e.cfg = cfg_.pose;
  e.w1 = param("pose.w1").value.template cast<double>();
  e.b1 = param("pose.b1").value.template cast<double>();
  e.w2 = param("pose.w2").value.template cast<double>();
  e.b2 = param("pose.b2").value.template cast<double>();
  e.w3 = param("pose.w3").value.template cast<double>();
  e.b3 = param("pose.b3").value.template cast<double>();
  e.embed = param("pose.embed").value.template cast<double>();
  e.null = param("pose.null").value.template cast<double>();
  return e;
}

template <typename S>
Mat<S> VelocityNet<S>::run(const NetBatch<S>& batch, Cache* cache) const {
  const NetConfig& cfg = cfg_;
  const int B = batch.batch, hw = batch.cells();
  const Eigen::Index N = static_cast<Eigen::Index>(B) * hw;
  const int D = cfg.pose.width;
  if (B < 1 || batch.zt.rows() != cfg.latent_channels || batch.zt.cols() != N ||
      batch.spatial.rows() != cfg.spatial_channels() || batch.spatial.cols() != N ||
      batch.ref.rows() != cfg.ref_channels || batch.ref.cols() != B ||
      static_cast<int>(batch.t.size()) != B || static_cast<int>(batch.descriptor.size()) != B ||
      static_cast<int>(batch.pose_dropped.size()) != B)
    throw ShapeMismatch("velocity net: batch does not match the network config");

  Cache local;
  Cache& c = cache ? *cache : local;
  auto P = [&](const char* name) -> const Mat<S>& { return param(name).value; };

  // Time embedding, one column per example.
  c.te_in.resize(2 * cfg.t_freqs + 1, B);
  for (int b = 0; b < B; ++b) c.te_in.col(b) = fourier_encode(batch.t[b], cfg.t_freqs).template cast<S>();
  c.te1 = P("temb.w") * c.te_in;
  c.te1.colwise() += P("temb.b").col(0);
  c.te = silu(c.te1);

  // Pose tokens: shared MLP per descriptor component, column b * 8 + i.
  c.enc_in.resize(cfg.pose.input_size(), 8 * B);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < 8; ++i)
      c.enc_in.col(b * 8 + i) = fourier_encode(batch.descriptor[b][i], cfg.pose.n_freqs).template cast<S>();
  c.e1 = P("pose.w1") * c.enc_in;
  c.e1.colwise() += P("pose.b1").col(0);
  c.a1 = silu(c.e1);
  c.e2 = P("pose.w2") * c.a1;
  c.e2.colwise() += P("pose.b2").col(0);
  c.a2 = silu(c.e2);
  Mat<S> e3 = P("pose.w3") * c.a2;
  e3.colwise() += P("pose.b3").col(0);
  c.tokens_flat.resize(8 * D, B);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < 8; ++i)
      c.tokens_flat.block(i * D, b, D, 1) = batch.pose_dropped[b]
                                                ? P("pose.null").col(i)
                                                : (e3.col(b * 8 + i) + P("pose.embed").col(i)).eval();

  // Global condition, broadcast into the first control convolution.
  Mat<S> g = P("cond.pose") * c.tokens_flat + P("cond.ref") * batch.ref;
  g.colwise() += P("cond.b").col(0);

  im2col3(batch.spatial, B, batch.height, batch.width, c.k1);
  c.c1.noalias() = P("ctrl.conv1.w") * c.k1;
  c.c1.colwise() += P("ctrl.conv1.b").col(0);
  add_per_example(c.c1, g, hw);
  const Mat<S> ac1 = silu(c.c1);
  im2col3(ac1, B, batch.height, batch.width, c.k2);
  c.c2.noalias() = P("ctrl.conv2.w") * c.k2;
  c.c2.colwise() += P("ctrl.conv2.b").col(0);
  c.cf = silu(c.c2);

  c.h.assign(cfg.blocks + 1, Mat<S>());
  c.a.assign(cfg.blocks, Mat<S>());
  c.s.assign(cfg.blocks, Mat<S>());
  c.h[0].noalias() = P("in.w") * batch.zt;
  c.h[0].colwise() += P("in.b").col(0);
  for (int k = 0; k < cfg.blocks; ++k) {
    const Mat<S>& w1 = param(block_name(k, "w1")).value;
    c.a[k].noalias() = w1 * c.h[k];
    c.a[k].colwise() += param(block_name(k, "b1")).value.col(0);
    add_per_example(c.a[k], (param(block_name(k, "u")).value * c.te).eval(), hw);
    c.s[k] = silu(c.a[k]);
    c.h[k + 1] = c.h[k];
    c.h[k + 1].noalias() += param(block_name(k, "w2")).value * c.s[k];
    c.h[k + 1].colwise() += param(block_name(k, "b2")).value.col(0);
    c.h[k + 1].noalias() += param(block_name(k, "zero")).value * c.cf;
  }
  Mat<S> v = P("out.w") * c.h[cfg.blocks];
  v.colwise() += P("out.b").col(0);
  return v;
}

template <typename S>
Mat<S> VelocityNet<S>::forward(const NetBatch<S>& batch) const {
  return run(batch, nullptr);
}

template <typename S>
double VelocityNet<S>::loss_and_grad(const NetBatch<S>& batch, const Mat<S>& v_star,
                                     std::vector<Mat<S>>* grads, bool freeze_backbone,
                                     std::vector<double>* per_example) const {
  Cache c;
  const Mat<S> v = run(batch, &c);
  if (v_star.rows() != v.rows() || v_star.cols() != v.cols())
    throw ShapeMismatch("loss_and_grad: v_star shape mismatch");
  const int B = batch.batch, hw = batch.cells();
  const Mat<S> diff = v - v_star;
  const double denom = static_cast<double>(diff.size());
  const double loss = static_cast<double>(diff.template cast<double>().squaredNorm()) / denom;
  if (per_example) {
    per_example->resize(B);
    for (int b = 0; b < B; ++b)
      (*per_example)[b] = diff.middleCols(static_cast<Eigen::Index>(b) * hw, hw).template cast<double>().squaredNorm() /
                          (static_cast<double>(diff.rows()) * hw);
  }
  if (!grads) return loss;

  const NetConfig& cfg = cfg_;
  const int D = cfg.pose.width;
  grads->resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    (*grads)[i].setZero(params_[i].value.rows(), params_[i].value.cols());
  auto G = [&](const std::string& name) -> Mat<S>& { return (*grads)[index(name)]; };
  auto P = [&](const std::string& name) -> const Mat<S>& { return params_[index(name)].value; };
  const bool fb = freeze_backbone;

  const Mat<S> dv = diff * static_cast<S>(2.0 / denom);
  const Mat<S>& hK = c.h[cfg.blocks];
  if (!fb) {
    G("out.w").noalias() = dv * hK.transpose();
    G("out.b") = dv.rowwise().sum();
  }
  Mat<S> dh = P("out.w").transpose() * dv;
  Mat<S> dcf = Mat<S>::Zero(cfg.control, dv.cols());
  Mat<S> dte = Mat<S>::Zero(cfg.hidden, B);
  for (int k = cfg.blocks - 1; k >= 0; --k) {
    G(block_name(k, "zero")).noalias() = dh * c.cf.transpose();
    dcf.noalias() += P(block_name(k, "zero")).transpose() * dh;
    if (!fb) {
      G(block_name(k, "w2")).noalias() = dh * c.s[k].transpose();
      G(block_name(k, "b2")) = dh.rowwise().sum();
    }
    Mat<S> da = P(block_name(k, "w2")).transpose() * dh;
    da.array() *= silu_grad(c.a[k]).array();
    if (!fb) {
      G(block_name(k, "w1")).noalias() = da * c.h[k].transpose();
      G(block_name(k, "b1")) = da.rowwise().sum();
      const Mat<S> pooled = sum_per_example(da, B, hw);
      G(block_name(k, "u")).noalias() = pooled * c.te.transpose();
      dte.noalias() += P(block_name(k, "u")).transpose() * pooled;
    }
    dh.noalias() += P(block_name(k, "w1")).transpose() * da;
  }
  if (!fb) {
    G("in.w").noalias() = dh * batch.zt.transpose();
    G("in.b") = dh.rowwise().sum();
    Mat<S> dte1 = dte;
    dte1.array() *= silu_grad(c.te1).array();
    G("temb.w").noalias() = dte1 * c.te_in.transpose();
    G("temb.b") = dte1.rowwise().sum();
  }

  // Control branch.
  Mat<S> dc2 = dcf;
  dc2.array() *= silu_grad(c.c2).array();
  G("ctrl.conv2.w").noalias() = dc2 * c.k2.transpose();
  G("ctrl.conv2.b") = dc2.rowwise().sum();
  const Mat<S> dk2 = P("ctrl.conv2.w").transpose() * dc2;
  Mat<S> dc1;
  col2im3(dk2, cfg.control, B, batch.height, batch.width, dc1);
  dc1.array() *= silu_grad(c.c1).array();
  G("ctrl.conv1.w").noalias() = dc1 * c.k1.transpose();
  G("ctrl.conv1.b") = dc1.rowwise().sum();
  const Mat<S> dg = sum_per_example(dc1, B, hw);
  G("cond.pose").noalias() = dg * c.tokens_flat.transpose();
  G("cond.ref").noalias() = dg * batch.ref.transpose();
  G("cond.b") = dg.rowwise().sum();
  const Mat<S> dtok = P("cond.pose").transpose() * dg;

  Mat<S> de3 = Mat<S>::Zero(D, 8 * B);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < 8; ++i) {
      const auto col = dtok.block(i * D, b, D, 1);
      if (batch.pose_dropped[b]) {
        G("pose.null").col(i) += col;
      } else {
        G("pose.embed").col(i) += col;
        de3.col(b * 8 + i) = col;
      }
    }
  G("pose.w3").noalias() = de3 * c.a2.transpose();
  G("pose.b3") = de3.rowwise().sum();
  Mat<S> de2 = P("pose.w3").transpose() * de3;
  de2.array() *= silu_grad(c.e2).array();
  G("pose.w2").noalias() = de2 * c.a1.transpose();
  G("pose.b2") = de2.rowwise().sum();
  Mat<S> de1 = P("pose.w2").transpose() * de2;
  de1.array() *= silu_grad(c.e1).array();
  G("pose.w1").noalias() = de1 * c.enc_in.transpose();
  G("pose.b1") = de1.rowwise().sum();

  for (std::size_t i = 0; i < grads->size(); ++i)
    if (!(*grads)[i].allFinite()) throw NonFinite("non-finite gradient for " + params_[i].name);
  return loss;
}

template class VelocityNet<float>;
template class VelocityNet<double>;

template <typename S>
Mat<S> latent_to_matrix(const std::vector<const LatentGrid*>& grids) {
  if (grids.empty()) return {};
  const LatentGrid& g0 = *grids.front();
  const int hw = g0.height * g0.width;
  Mat<S> m(g0.channels, static_cast<Eigen::Index>(grids.size()) * hw);
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (!grids[b]->same_shape(g0)) throw ShapeMismatch("latent batch with mixed shapes");
    for (int ch = 0; ch < g0.channels; ++ch)
      for (int i = 0; i < hw; ++i)
        m(ch, static_cast<Eigen::Index>(b) * hw + i) =
            static_cast<S>(grids[b]->data[static_cast<std::size_t>(ch) * hw + i]);
  }
  return m;
}

template Mat<float> latent_to_matrix<float>(const std::vector<const LatentGrid*>&);
template Mat<double> latent_to_matrix<double>(const std::vector<const LatentGrid*>&);

template <typename S>
NetBatch<S> make_batch(const NetConfig& cfg, const std::vector<const ConditioningTuple*>& conds,
                       const std::vector<const LatentGrid*>& zt, const std::vector<double>& t) {
  if (conds.empty() || conds.size() != zt.size() || conds.size() != t.size())
    throw ShapeMismatch("make_batch: need matching, non-empty inputs");
  NetBatch<S> nb;
  nb.batch = static_cast<int>(conds.size());
  nb.height = zt.front()->height;
  nb.width = zt.front()->width;
  const int hw = nb.cells(), C = cfg.latent_channels, M = cfg.mask_channels;
  if (zt.front()->channels != C) throw ShapeMismatch("make_batch: latent channels differ from config");
  nb.zt = latent_to_matrix<S>(zt);
  nb.spatial.resize(cfg.spatial_channels(), static_cast<Eigen::Index>(nb.batch) * hw);
  nb.ref.resize(cfg.ref_channels, nb.batch);
  for (int b = 0; b < nb.batch; ++b) {
    const ConditioningTuple& c = *conds[b];
    const auto check_code = [&](const MaskCode& m) {
      if (m.channels != M || m.height != nb.height || m.width != nb.width || m.frames != 1)
        throw ShapeMismatch("make_batch: mask code shape differs from the latent grid");
    };
    if (c.src_latent.channels != C || c.src_latent.height != nb.height || c.src_latent.width != nb.width)
      throw ShapeMismatch("make_batch: source latent shape differs from the latent grid");
    check_code(c.src_mask_code);
    check_code(c.tgt_mask_code);
    if (c.ref_latent.channels != cfg.ref_channels)
      throw ShapeMismatch("make_batch: reference latent channels differ from config");
    const Eigen::Index col0 = static_cast<Eigen::Index>(b) * hw;
    for (int ch = 0; ch < C; ++ch)
      for (int i = 0; i < hw; ++i)
        nb.spatial(ch, col0 + i) = static_cast<S>(c.src_latent.data[static_cast<std::size_t>(ch) * hw + i]);
    for (int ch = 0; ch < M; ++ch)
      for (int i = 0; i < hw; ++i) {
        const std::size_t idx = static_cast<std::size_t>(ch) * hw + i;
        nb.spatial(C + ch, col0 + i) = static_cast<S>(c.src_mask_code.data[idx]);
        nb.spatial(C + M + ch, col0 + i) = static_cast<S>(c.tgt_mask_code.data[idx]);
      }
    const int rc = c.ref_latent.height * c.ref_latent.width;
    for (int ch = 0; ch < cfg.ref_channels; ++ch) {
      double acc = 0.0;
      for (int i = 0; i < rc; ++i) acc += c.ref_latent.data[static_cast<std::size_t>(ch) * rc + i];
      nb.ref(ch, b) = static_cast<S>(acc / rc);
    }
    nb.t.push_back(t[b]);
    nb.descriptor.push_back(c.descriptor.flatten());
    nb.pose_dropped.push_back(c.pose_dropped);
  }
  return nb;
}

template NetBatch<float> make_batch<float>(const NetConfig&, const std::vector<const ConditioningTuple*>&,
                                           const std::vector<const LatentGrid*>&, const std::vector<double>&);
template NetBatch<double> make_batch<double>(const NetConfig&, const std::vector<const ConditioningTuple*>&,
                                             const std::vector<const LatentGrid*>&, const std::vector<double>&);

GradCheckResult gradient_check(VelocityNet<double>& net, const NetBatch<double>& batch,
                               const Mat<double>& v_star, int n_probes, std::mt19937_64& rng,
                               double h) {
  std::vector<Mat<double>> grads;
  net.loss_and_grad(batch, v_star, &grads);
  const std::size_t total = net.parameter_count();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  GradCheckResult res;
  for (int p = 0; p < n_probes; ++p) {
    std::size_t flat = pick(rng);
    std::size_t which = 0;
    while (flat >= static_cast<std::size_t>(net.params()[which].value.size())) {
      flat -= net.params()[which].value.size();
      ++which;
    }
    double& w = net.params()[which].value.data()[flat];
    const double saved = w;
    w = saved + h;
    const double lp = net.loss_and_grad(batch, v_star, nullptr);
    w = saved - h;
    const double lm = net.loss_and_grad(batch, v_star, nullptr);
    w = saved;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = grads[which].data()[flat];
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    ++res.checked;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = net.params()[which].name;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training

double one_cycle_lr(const TrainConfig& cfg, int step) {
  const double lr_max = cfg.lr, lr_start = cfg.lr / 25.0, lr_end = lr_start / 1e4;
  const int warm = std::max(1, static_cast<int>(std::lround(cfg.pct_start * cfg.steps)));
  if (step < warm) {
    const double p = static_cast<double>(step) / warm;
    return lr_start + (lr_max - lr_start) * 0.5 * (1.0 - std::cos(std::numbers::pi * p));
  }
  const double p = static_cast<double>(step - warm) / std::max(1, cfg.steps - warm);
  return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, p)));
}

namespace {

std::vector<std::uint8_t> to_bytes(const RgbImage& img) {
  std::vector<std::uint8_t> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  return out;
}

RgbImage from_bytes(const std::vector<std::uint8_t>& bytes, int h, int w) {
  RgbImage img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace

CompactPair CompactPair::from(const SamplePair& p) {
  CompactPair c;
  c.height = p.x_src.height;
  c.width = p.x_src.width;
  c.ref_size = p.i_ref.height;
  c.x_src = to_bytes(p.x_src);
  c.x_tgt = to_bytes(p.x_tgt);
  c.x_bg = to_bytes(p.x_bg);
  c.i_ref = to_bytes(p.i_ref);
  c.m_src = p.m_src;
  c.m_tgt_true = p.m_tgt_true;
  c.s_src = p.s_src;
  c.s_tgt = p.s_tgt;
  c.f = p.f;
  return c;
}

SamplePair CompactPair::expand() const {
  SamplePair p;
  p.x_src = from_bytes(x_src, height, width);
  p.x_tgt = from_bytes(x_tgt, height, width);
  p.x_bg = from_bytes(x_bg, height, width);
  p.i_ref = from_bytes(i_ref, ref_size, ref_size);
  p.m_src = m_src;
  p.m_tgt_true = m_tgt_true;
  p.s_src = s_src;
  p.s_tgt = s_tgt;
  p.f = f;
  return p;
}

std::vector<CompactPair> load_training_set(const std::vector<ManifestRecord>& records,
                                           const std::filesystem::path& root) {
  std::vector<CompactPair> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(CompactPair::from(load_pair(r, root)));
  return out;
}

TrainResult train(VelocityNet<float>& net, const std::vector<CompactPair>& data,
                  const TrainConfig& cfg, int stride,
                  const std::function<void(int, double)>& on_step) {
  cfg.validate();
  if (data.empty()) throw BadParams("training needs a non-empty dataset");
  std::mt19937_64 rng(cfg.seed);
  auto& params = net.params();
  std::vector<Mat<float>> m(params.size()), v(params.size()), grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].setZero(params[i].value.rows(), params[i].value.cols());
    v[i].setZero(params[i].value.rows(), params[i].value.cols());
  }
  const bool freeze = cfg.stage == 2;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TrainResult result;
  result.step_loss.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const PoseEncoder encoder = net.pose_encoder();
    std::vector<ConditioningTuple> conds(cfg.batch_size);
    std::vector<FlowSample> flows(cfg.batch_size);
    std::vector<Task> tasks(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const SamplePair pair = data[pick(rng)].expand();
      tasks[b] = sample_task(rng, cfg.task_weights);
      conds[b] = drop_camera_condition(assemble_conditioning(pair, tasks[b], encoder, stride), rng,
                                       cfg.dropout, encoder);
      const LatentGrid z0 =
          toy_encode(tasks[b] == Task::Aux1Removal ? pair.x_bg : pair.x_tgt, stride);
      const double t = unit(rng);
      flows[b] = make_flow_sample(z0, rng, t);
    }
    std::vector<const ConditioningTuple*> cp;
    std::vector<const LatentGrid*> zp, vp;
    std::vector<double> ts;
    for (int b = 0; b < cfg.batch_size; ++b) {
      cp.push_back(&conds[b]);
      zp.push_back(&flows[b].zt);
      vp.push_back(&flows[b].v_star);
      ts.push_back(flows[b].t);
    }
    const NetBatch<float> batch = make_batch<float>(net.config(), cp, zp, ts);
    std::vector<double> per_example;
    double loss = 0.0;
    try {
      loss = net.loss_and_grad(batch, latent_to_matrix<float>(vp), &grads, freeze, &per_example);
    } catch (const NonFinite& e) {
      throw NonFinite("step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss)) throw NonFinite("step " + std::to_string(step) + ": loss is not finite");

    double norm2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!(freeze && params[i].backbone)) norm2 += grads[i].template cast<double>().squaredNorm();
    const double clip = cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip
                            ? cfg.grad_clip / std::sqrt(norm2)
                            : 1.0;
    const double lr = one_cycle_lr(cfg, step);
    const double bc1 = 1.0 - std::pow(kBeta1, step + 1), bc2 = 1.0 - std::pow(kBeta2, step + 1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (freeze && params[i].backbone) continue;
      const auto g = (grads[i].array() * static_cast<float>(clip)).eval();
      m[i].array() = kBeta1 * m[i].array() + (1.0f - kBeta1) * g;
      v[i].array() = kBeta2 * v[i].array() + (1.0f - kBeta2) * g.square();
      params[i].value.array() -= static_cast<float>(lr) * (m[i].array() / static_cast<float>(bc1)) /
                                 ((v[i].array() / static_cast<float>(bc2)).sqrt() + static_cast<float>(kEps));
    }

    result.step_loss.push_back(loss);
    for (Task task : {Task::Main, Task::Aux1Removal, Task::Aux2RefInpaint}) {
      double acc = 0.0;
      int n = 0;
      for (int b = 0; b < cfg.batch_size; ++b)
        if (tasks[b] == task) acc += per_example[b], ++n;
      if (n) result.trace.push_back({step, task, acc / n});
    }
    if (on_step) on_step(step, loss);
  }
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,task,loss\n";
  out.precision(9);
  for (const auto& row : result.trace) out << row.step << "," << to_string(row.task) << "," << row.loss << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

double smoothed_loss(const std::vector<double>& step_loss, int center, int half) {
  if (step_loss.empty()) return 0.0;
  const int n = static_cast<int>(step_loss.size());
  const int lo = std::clamp(center - half, 0, n - 1), hi = std::clamp(center + half, 0, n - 1);
  double acc = 0.0;
  for (int i = lo; i <= hi; ++i) acc += step_loss[i];
  return acc / (hi - lo + 1);
}

// ---------------------------------------------------------------------------
// Sampling

LatentGrid euler_integrate(const VelocityFn& v, LatentGrid z, int steps) {
  if (steps < 1) throw BadParams("euler sampling needs at least one step");
  const double dt = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - i * dt;
    const LatentGrid vel = v(z, t);
    if (!vel.same_shape(z)) throw ShapeMismatch("velocity shape differs from the state");
    for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] -= dt * vel.data[k];
  }
  for (double x : z.data)
    if (!std::isfinite(x)) throw NonFinite("euler sampling diverged");
  return z;
}

template <typename S>
LatentGrid euler_sample(const VelocityNet<S>& net, const ConditioningTuple& cond, int steps,
                        std::mt19937_64& rng, double guidance) {
  const NetConfig& cfg = net.config();
  LatentGrid eps;
  eps.channels = cfg.latent_channels;
  eps.height = cond.src_latent.height;
  eps.width = cond.src_latent.width;
  eps.stride = cond.src_latent.stride;
  eps.data.resize(static_cast<std::size_t>(eps.channels) * eps.height * eps.width);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& e : eps.data) e = normal(rng);

  ConditioningTuple null_cond = cond;
  null_cond.pose_dropped = true;
  null_cond.pose_tokens = net.pose_encoder().null_tokens();
  const bool guided = guidance != 1.0;

  const VelocityFn fn = [&](const LatentGrid& z, double t) {
    std::vector<const ConditioningTuple*> cs{&cond};
    std::vector<const LatentGrid*> zs{&z};
    std::vector<double> ts{t};
    if (guided) {
      cs.push_back(&null_cond);
      zs.push_back(&z);
      ts.push_back(t);
    }
    const Mat<S> out = net.forward(make_batch<S>(cfg, cs, zs, ts));
    const int hw = z.height * z.width;
    LatentGrid vel = z;
    for (int ch = 0; ch < z.channels; ++ch)
      for (int i = 0; i < hw; ++i) {
        double vc = static_cast<double>(out(ch, i));
        if (guided) {
          const double vn = static_cast<double>(out(ch, hw + i));
          vc = vn + guidance * (vc - vn);
        }
        vel.data[static_cast<std::size_t>(ch) * hw + i] = vc;
      }
    return vel;
  };
  return euler_integrate(fn, std::move(eps), steps);
}

template LatentGrid euler_sample<float>(const VelocityNet<float>&, const ConditioningTuple&, int,
                                        std::mt19937_64&, double);
template LatentGrid euler_sample<double>(const VelocityNet<double>&, const ConditioningTuple&, int,
                                         std::mt19937_64&, double);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'E', 'O', 'E', 'D', 'C', 'K', 'P'};

// Little-endian on disk regardless of the host.
template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof v];
  for (std::size_t i = 0; i < sizeof v; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof bytes);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  T v = 0;
  for (std::size_t i = 0; i < sizeof bytes; ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path, std::uint32_t max_len) {
  const auto len = get<std::uint32_t>(in, path);
  if (len > max_len) throw IncompatibleCheckpoint("implausible string length in " + path.string());
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

std::uint64_t config_digest(const NetConfig& cfg) {
  const std::string text = nlohmann::json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const VelocityNet<float>& net,
                     const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, config_digest(net.config()));
  const std::string header = nlohmann::json{{"net", net.config()}, {"meta", meta}}.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p.value(r, c)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

VelocityNet<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IncompatibleCheckpoint(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw IncompatibleCheckpoint("checkpoint version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  const auto digest = get<std::uint64_t>(in, path);
  nlohmann::json header;
  NetConfig cfg;
  try {
    header = nlohmann::json::parse(get_string(in, path, 1u << 20));
    cfg = header.at("net").get<NetConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint("bad checkpoint header: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw IncompatibleCheckpoint(std::string("bad network config: ") + e.what());
  }
  if (digest != config_digest(cfg)) throw IncompatibleCheckpoint("config digest mismatch");
  if (meta) *meta = header.value("meta", nlohmann::json::object());

  VelocityNet<float> net = VelocityNet<float>::init(cfg, 0);
  const auto count = get<std::uint32_t>(in, path);
  if (count != net.params().size()) throw IncompatibleCheckpoint("parameter count mismatch");
  for (auto& p : net.params()) {
    const std::string name = get_string(in, path, 1024);
    const auto rows = get<std::uint32_t>(in, path), cols = get<std::uint32_t>(in, path);
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols())
      throw IncompatibleCheckpoint("unexpected parameter " + name);
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        p.value(r, c) = std::bit_cast<float>(get<std::uint32_t>(in, path));
  }
  return net;
}

}  // namespace geoedit
