#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "geoedit/camera.hpp"

namespace geoedit {

/// {0,1} volume of shape T x 1 x H x W, stored frame-major then row-major.
/// 1 marks a region to edit/paint, 0 a region to preserve.
class BinaryMaskVolume {
 public:
  BinaryMaskVolume() = default;
  /// All-zero volume. Throws BadParams unless T, H, W >= 1.
  BinaryMaskVolume(int frames, int height, int width);
  /// Throws BadParams if any value is not 0 or 1 or the size is wrong.
  BinaryMaskVolume(int frames, int height, int width, std::vector<std::uint8_t> data);

  int frames() const { return t_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t at(int f, int r, int c) const { return data_[index(f, r, c)]; }
  void set(int f, int r, int c, bool v) { data_[index(f, r, c)] = v ? 1 : 0; }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<const std::uint8_t> frame(int f) const;
  std::size_t count_ones() const;
  bool empty_frame(int f) const;

  bool operator==(const BinaryMaskVolume&) const = default;

 private:
  std::size_t index(int f, int r, int c) const {
    return (static_cast<std::size_t>(f) * h_ + r) * w_ + c;
  }

  int t_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Space-to-depth code of a mask volume, shape
/// (T/t) x (t*s*s) x (H/s) x (W/s). Channel index inside one output cell is
/// temporal-major, then row-major within the s x s block:
///   channel = dt * s*s + dy * s + dx.
struct MaskCode {
  int frames = 0;    // T / t
  int channels = 0;  // t * s * s
  int height = 0;    // H / s
  int width = 0;     // W / s
  int spatial_stride = 1;
  int temporal_stride = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int f, int ch, int r, int c) const {
    return data[((static_cast<std::size_t>(f) * channels + ch) * height + r) * width + c];
  }
  std::size_t count_ones() const;
  bool all_zero() const { return count_ones() == 0; }
  bool operator==(const MaskCode&) const = default;
};

MaskCode pixel_unshuffle(const BinaryMaskVolume& m, int spatial_stride,
                         int temporal_stride = 1);
BinaryMaskVolume pixel_shuffle_inverse(const MaskCode& code);

/// Half-open pixel box [row_min, row_max) x [col_min, col_max).
struct BBox {
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  int height() const { return row_max - row_min; }
  int width() const { return col_max - col_min; }
  bool operator==(const BBox&) const = default;
};

/// Tightest box around the ones of one frame; std::nullopt for an empty frame.
std::optional<BBox> tight_bbox(const BinaryMaskVolume& m, int frame);

/// Tight box expanded to a square of side max(height, width) about its
/// center, then clipped to the image. An odd expansion puts the extra pixel
/// after the box. std::nullopt for an empty frame.
std::optional<BBox> mask_bbox(const BinaryMaskVolume& m, int frame);

/// Estimated target mask from the source mask and the relative pose:
/// square the bounding box, scale its side by d_src / d_tgt, shift the
/// center by (dr_x * W/2, -dr_y * H/2) pixels (NDC y points up, rows point
/// down), fill and clip. A shift of a full frame width/height or more in
/// either axis yields the all-zero mask.
BinaryMaskVolume estimate_target_mask(const BinaryMaskVolume& m_src,
                                      const RelPoseDescriptor& f, double d_src,
                                      double d_tgt);

/// |a & b| / |a | b|, defined as 1 when both are empty.
double mask_iou(const BinaryMaskVolume& a, const BinaryMaskVolume& b);

}  // namespace geoedit
