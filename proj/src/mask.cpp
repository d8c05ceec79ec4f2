#include "geoedit/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "geoedit/errors.hpp"

namespace geoedit {

BinaryMaskVolume::BinaryMaskVolume(int frames, int height, int width)
    : t_(frames), h_(height), w_(width) {
  if (frames < 1 || height < 1 || width < 1)
    throw BadParams("mask dimensions must be >= 1");
  data_.assign(static_cast<std::size_t>(frames) * height * width, 0);
}

BinaryMaskVolume::BinaryMaskVolume(int frames, int height, int width,
                                   std::vector<std::uint8_t> data)
    : BinaryMaskVolume(frames, height, width) {
  if (data.size() != data_.size())
    throw BadParams("mask data has " + std::to_string(data.size()) +
                    " elements, expected " + std::to_string(data_.size()));
  if (std::any_of(data.begin(), data.end(), [](std::uint8_t v) { return v > 1; }))
    throw BadParams("mask values must be 0 or 1");
  data_ = std::move(data);
}

std::span<const std::uint8_t> BinaryMaskVolume::frame(int f) const {
  const std::size_t n = static_cast<std::size_t>(h_) * w_;
  return std::span<const std::uint8_t>(data_).subspan(f * n, n);
}

std::size_t BinaryMaskVolume::count_ones() const {
  return std::accumulate(data_.begin(), data_.end(), std::size_t{0});
}

bool BinaryMaskVolume::empty_frame(int f) const {
  const auto fr = frame(f);
  return std::none_of(fr.begin(), fr.end(), [](std::uint8_t v) { return v != 0; });
}

std::size_t MaskCode::count_ones() const {
  return std::accumulate(data.begin(), data.end(), std::size_t{0});
}

MaskCode pixel_unshuffle(const BinaryMaskVolume& m, int s, int t) {
  if (s < 1 || t < 1) throw ShapeMismatch("strides must be >= 1");
  if (m.height() % s != 0 || m.width() % s != 0 || m.frames() % t != 0)
    throw ShapeMismatch("volume " + std::to_string(m.frames()) + "x" +
                        std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                        " not divisible by strides (t=" + std::to_string(t) +
                        ", s=" + std::to_string(s) + ")");
  MaskCode code;
  code.frames = m.frames() / t;
  code.channels = t * s * s;
  code.height = m.height() / s;
  code.width = m.width() / s;
  code.spatial_stride = s;
  code.temporal_stride = t;
  code.data.resize(m.size());

  std::size_t out = 0;
  for (int f = 0; f < code.frames; ++f)
    for (int dt = 0; dt < t; ++dt)
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx)
          for (int r = 0; r < code.height; ++r)
            for (int c = 0; c < code.width; ++c)
              code.data[out++] = m.at(f * t + dt, r * s + dy, c * s + dx);
  return code;
}

BinaryMaskVolume pixel_shuffle_inverse(const MaskCode& code) {
  const int s = code.spatial_stride;
  const int t = code.temporal_stride;
  if (s < 1 || t < 1 || code.channels != t * s * s || code.frames < 1 ||
      code.height < 1 || code.width < 1 ||
      code.data.size() != static_cast<std::size_t>(code.frames) * code.channels *
                              code.height * code.width)
    throw ShapeMismatch("mask code shape inconsistent with its strides");

  BinaryMaskVolume m(code.frames * t, code.height * s, code.width * s);
  std::size_t in = 0;
  for (int f = 0; f < code.frames; ++f)
    for (int dt = 0; dt < t; ++dt)
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx)
          for (int r = 0; r < code.height; ++r)
            for (int c = 0; c < code.width; ++c) {
              const std::uint8_t v = code.data[in++];
              if (v > 1) throw ShapeMismatch("mask code is not binary");
              m.set(f * t + dt, r * s + dy, c * s + dx, v != 0);
            }
  return m;
}

std::optional<BBox> tight_bbox(const BinaryMaskVolume& m, int frame) {
  if (frame < 0 || frame >= m.frames()) throw BadParams("frame index out of range");
  BBox b{m.height(), -1, m.width(), -1};
  bool any = false;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(frame, r, c)) {
        any = true;
        b.row_min = std::min(b.row_min, r);
        b.row_max = std::max(b.row_max, r + 1);
        b.col_min = std::min(b.col_min, c);
        b.col_max = std::max(b.col_max, c + 1);
      }
  if (!any) return std::nullopt;
  return b;
}

std::optional<BBox> mask_bbox(const BinaryMaskVolume& m, int frame) {
  auto tight = tight_bbox(m, frame);
  if (!tight) return std::nullopt;
  const int side = std::max(tight->height(), tight->width());
  BBox sq;
  sq.row_min = tight->row_min - (side - tight->height()) / 2;
  sq.row_max = sq.row_min + side;
  sq.col_min = tight->col_min - (side - tight->width()) / 2;
  sq.col_max = sq.col_min + side;
  sq.row_min = std::max(sq.row_min, 0);
  sq.col_min = std::max(sq.col_min, 0);
  sq.row_max = std::min(sq.row_max, m.height());
  sq.col_max = std::min(sq.col_max, m.width());
  return sq;
}

namespace {

// Pixels whose centers i + 0.5 fall in [lo, lo + side), clipped to
// [0, extent). Returned as a half-open index range.
std::pair<int, int> covered_pixels(double lo, double side, int extent) {
  const double first = std::ceil(lo - 0.5);
  const double last = first + side;
  const double b = std::clamp(first, 0.0, static_cast<double>(extent));
  const double e = std::clamp(last, 0.0, static_cast<double>(extent));
  return {static_cast<int>(b), static_cast<int>(e)};
}

}  // namespace

BinaryMaskVolume estimate_target_mask(const BinaryMaskVolume& m_src,
                                      const RelPoseDescriptor& f, double d_src,
                                      double d_tgt) {
  if (!(d_src > 0.0) || !(d_tgt > 0.0)) throw BadParams("distances must be positive");
  const int H = m_src.height();
  const int W = m_src.width();
  BinaryMaskVolume out(m_src.frames(), H, W);
  if (std::abs(f.dr_x) >= 2.0 || std::abs(f.dr_y) >= 2.0) return out;

  const double ratio = d_src / d_tgt;
  for (int fr = 0; fr < m_src.frames(); ++fr) {
    const auto tight = tight_bbox(m_src, fr);
    if (!tight) continue;
    const int side = std::max(tight->height(), tight->width());
    const double new_side = std::max(1.0, std::round(side * ratio));
    const double center_r = 0.5 * (tight->row_min + tight->row_max) - f.dr_y * H / 2.0;
    const double center_c = 0.5 * (tight->col_min + tight->col_max) + f.dr_x * W / 2.0;

    const auto [r0, r1] = covered_pixels(center_r - new_side / 2.0, new_side, H);
    const auto [c0, c1] = covered_pixels(center_c - new_side / 2.0, new_side, W);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) out.set(fr, r, c, true);
  }
  return out;
}

double mask_iou(const BinaryMaskVolume& a, const BinaryMaskVolume& b) {
  if (a.frames() != b.frames() || a.height() != b.height() || a.width() != b.width())
    throw ShapeMismatch("mask_iou requires identical shapes");
  std::size_t inter = 0, uni = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    inter += da[i] & db[i];
    uni += da[i] | db[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace geoedit
