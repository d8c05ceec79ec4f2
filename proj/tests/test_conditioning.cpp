#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "geoedit/conditioning.hpp"
#include "geoedit/errors.hpp"
#include "mask_oracles.hpp"

using namespace geoedit;
using std::numbers::pi;

namespace {

SamplePair random_pair(std::uint64_t index, bool same_camera = false) {
  GenConfig cfg;
  cfg.seed = 11;
  const SceneDraw d = draw_scene(cfg, index);
  return render_pair(d.scene, d.s_src, same_camera ? d.s_src : d.s_tgt, 64, 64, 32);
}

// latent(ch = (dy s + dx) 3 + color, r, c) = (img(r s + dy, c s + dx, color) - 0.5) / 0.5
double reference_latent(const RgbImage& img, int s, int ch, int r, int c) {
  const int color = ch % 3, within = ch / 3;
  return (img.at(r * s + within / s, c * s + within % s, color) - 0.5) / 0.5;
}

}  // namespace

TEST_CASE("fourier_encode") {
  const Eigen::VectorXd a = fourier_encode(0.0, 2);
  REQUIRE(a.size() == 5);
  CHECK(a(0) == 0.0);
  CHECK(a(1) == 0.0);
  CHECK(a(2) == 1.0);
  CHECK(a(3) == 0.0);
  CHECK(a(4) == 1.0);
  const Eigen::VectorXd b = fourier_encode(pi, 1);
  CHECK(b(0) == pi);
  CHECK(std::abs(b(1)) < 1e-15);
  CHECK(b(2) == -1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int n = 1; n <= 8; ++n) {
    const double x = u(rng);
    const Eigen::VectorXd e = fourier_encode(x, n);
    REQUIRE(e.size() == 2 * n + 1);
    for (int k = 0; k < n; ++k) {
      CHECK(e(1 + 2 * k) == doctest::Approx(std::sin(std::ldexp(x, k))).epsilon(1e-12));
      CHECK(e(2 + 2 * k) == doctest::Approx(std::cos(std::ldexp(x, k))).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(fourier_encode(1.0, 0), BadParams);
}

TEST_CASE("toy encoder") {
  const LatentGrid half = toy_encode(RgbImage(64, 64, 0.5), 4);
  CHECK(half.channels == 48);
  CHECK(half.height == 16);
  CHECK(half.width == 16);
  for (double v : half.data) REQUIRE(v == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int s : {2, 4}) {
    RgbImage img(16, 24);
    for (double& v : img.data) v = u(rng);
    const LatentGrid z = toy_encode(img, s);
    REQUIRE(z.channels == 3 * s * s);
    for (int ch = 0; ch < z.channels; ++ch)
      for (int r = 0; r < z.height; ++r)
        for (int c = 0; c < z.width; ++c) REQUIRE(z.at(ch, r, c) == reference_latent(img, s, ch, r, c));
    const RgbImage back = toy_decode(z);
    for (std::size_t k = 0; k < img.data.size(); ++k) REQUIRE(std::abs(back.data[k] - img.data[k]) < 1e-12);
  }
  CHECK_THROWS_AS(toy_encode(RgbImage(10, 16), 4), ShapeMismatch);
}

TEST_CASE("pose encoder") {
  PoseEncoderConfig cfg;
  cfg.width = 16;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  RelPoseDescriptor f;
  f.aa = Vec3(0.1, -0.2, 0.3);
  f.t_rel = Vec3(0.5, 0.0, -1.0);
  f.dr_x = 0.2;

  const PoseTokens z = PoseEncoder::zeros(cfg).encode(f);
  CHECK(z.tokens.rows() == 8);
  CHECK(z.tokens.cols() == 16);
  CHECK(z.tokens.isZero(0.0));

  const PoseEncoder enc = PoseEncoder::random(cfg, rng);
  RelPoseDescriptor g = f;
  g.t_rel.x() = -0.7;  // component 3
  const PoseTokens a = enc.encode(f), b = enc.encode(g);
  for (int i = 0; i < 8; ++i) {
    if (i == 3) CHECK_FALSE(a.tokens.row(i) == b.tokens.row(i));
    else CHECK(a.tokens.row(i) == b.tokens.row(i));
  }
  CHECK(a.tokens.allFinite());
  CHECK(enc.null_tokens().tokens.rows() == 8);
  CHECK_FALSE(enc.null_tokens() == enc.encode(RelPoseDescriptor{}));

  std::set<std::vector<double>> seen;
  for (int i = 0; i < 1000; ++i) {
    std::array<double, 8> x;
    for (double& v : x) v = u(rng);
    const PoseTokens t = enc.encode(RelPoseDescriptor::from_array(x));
    REQUIRE(t.tokens.allFinite());
    seen.insert(std::vector<double>(t.tokens.data(), t.tokens.data() + t.tokens.size()));
  }
  CHECK(seen.size() == 1000);

  PoseEncoder broken = enc;
  broken.w2.resize(3, 3);
  CHECK_THROWS_AS(broken.encode(f), ShapeMismatch);
}

TEST_CASE("task names") {
  CHECK(task_from_string("manipulate") == Task::Main);
  CHECK(task_from_string("removal") == Task::Aux1Removal);
  CHECK(task_from_string("inpaint") == Task::Aux2RefInpaint);
  for (Task t : {Task::Main, Task::Aux1Removal, Task::Aux2RefInpaint}) CHECK(task_from_string(to_string(t)) == t);
  CHECK_THROWS_AS(task_from_string("edit"), ConfigError);
}

TEST_CASE("task tuples") {
  std::mt19937_64 rng(4);
  PoseEncoderConfig pc;
  pc.width = 8;
  const PoseEncoder enc = PoseEncoder::random(pc, rng);
  const LatentGrid white_ref = toy_encode(RgbImage(32, 32, 1.0), 4);
  int differs_from_truth = 0;
  for (std::uint64_t i = 0; i < 25; ++i) {
    const SamplePair p = random_pair(i);
    const ConditioningTuple m = assemble_conditioning(p, Task::Main, enc, 4);
    const ConditioningTuple a1 = assemble_conditioning(p, Task::Aux1Removal, enc, 4);
    const ConditioningTuple a2 = assemble_conditioning(p, Task::Aux2RefInpaint, enc, 4);

    const MaskCode est = test::reference_unshuffle(
        test::reference_target_mask(p.m_src, p.f, p.s_src.distance(), p.s_tgt.distance()), 4, 1);
    CHECK(m.task == Task::Main);
    CHECK(m.src_latent == toy_encode(p.x_src, 4));
    CHECK(m.ref_latent == toy_encode(p.i_ref, 4));
    CHECK(m.src_mask_code == test::reference_unshuffle(p.m_src, 4, 1));
    CHECK(m.tgt_mask_code == est);
    CHECK(m.pose_tokens == enc.encode(p.f));
    CHECK_FALSE(m.pose_dropped);
    differs_from_truth += !(m.tgt_mask_code == test::reference_unshuffle(p.m_tgt_true, 4, 1));

    CHECK(a1.ref_latent == white_ref);
    CHECK(a1.tgt_mask_code.all_zero());
    CHECK(a1.descriptor.flatten() == build_outofframe_descriptor(p.s_src).flatten());
    CHECK(a1.pose_tokens == enc.encode(build_outofframe_descriptor(p.s_src)));
    CHECK(a1.src_latent == toy_encode(p.x_src, 4));
    CHECK(a1.src_mask_code == m.src_mask_code);

    CHECK(a2.src_mask_code.all_zero());
    CHECK(a2.src_latent == toy_encode(p.x_bg, 4));
    CHECK(a2.ref_latent == m.ref_latent);
    CHECK(a2.tgt_mask_code == est);

    for (const auto* t : {&a1, &a2}) {
      CHECK(t->src_latent.same_shape(m.src_latent));
      CHECK(t->ref_latent.same_shape(m.ref_latent));
      CHECK(t->src_mask_code.data.size() == m.src_mask_code.data.size());
      CHECK(t->tgt_mask_code.data.size() == m.tgt_mask_code.data.size());
      CHECK(t->pose_tokens.tokens.rows() == m.pose_tokens.tokens.rows());
    }
  }
  CHECK(differs_from_truth > 0);

  // Identity edit: the target code is the source square-box code.
  const SamplePair same = random_pair(3, true);
  const ConditioningTuple m = assemble_conditioning(same, Task::Main, enc, 4);
  CHECK(m.tgt_mask_code ==
        test::reference_unshuffle(test::reference_target_mask(same.m_src, RelPoseDescriptor{}, 1.0, 1.0), 4, 1));

  SamplePair no_plate = random_pair(5);
  no_plate.x_bg = RgbImage();
  CHECK_NOTHROW(assemble_conditioning(no_plate, Task::Main, enc, 4));
  CHECK_THROWS_AS(assemble_conditioning(no_plate, Task::Aux1Removal, enc, 4), MissingBackground);
  CHECK_THROWS_AS(assemble_conditioning(no_plate, Task::Aux2RefInpaint, enc, 4), MissingBackground);
}

TEST_CASE("camera-condition dropout") {
  std::mt19937_64 rng(5);
  PoseEncoderConfig pc;
  pc.width = 8;
  const PoseEncoder enc = PoseEncoder::random(pc, rng);
  const ConditioningTuple base = assemble_conditioning(random_pair(1), Task::Main, enc, 4);

  for (int i = 0; i < 100; ++i) {
    const ConditioningTuple kept = drop_camera_condition(base, rng, 0.0, enc);
    REQUIRE_FALSE(kept.pose_dropped);
    REQUIRE(kept.pose_tokens == base.pose_tokens);
    const ConditioningTuple dropped = drop_camera_condition(base, rng, 1.0, enc);
    REQUIRE(dropped.pose_dropped);
    REQUIRE(dropped.pose_tokens == enc.null_tokens());
    REQUIRE(dropped.src_latent == base.src_latent);
  }
  int n = 0;
  for (int i = 0; i < 10000; ++i) n += drop_camera_condition(base, rng, 0.1, enc).pose_dropped;
  CHECK(n >= 900);
  CHECK(n <= 1100);
}
