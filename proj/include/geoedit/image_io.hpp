#pragma once

#include <filesystem>
#include <vector>

#include "geoedit/mask.hpp"
#include "geoedit/silhouette.hpp"

namespace geoedit {

/// H x W x 3 image with channel values in [0, 1], interleaved row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  double at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  bool operator==(const RgbImage&) const = default;
};

/// Binary P6, 8 bits per channel. Values are clamped and rounded on write,
/// so read_ppm(write_ppm(x)) is x quantized to multiples of 1/255.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

/// Rounds every channel to the nearest multiple of 1/255, i.e. what a
/// PPM round trip produces.
RgbImage quantize8(const RgbImage& img);

/// Binary P5 with values 0 / 255 for one frame of a mask.
void write_mask_pgm(const std::filesystem::path& path, const BinaryMaskVolume& m, int frame = 0);
/// Any P5 (8 or 16 bit); a pixel is set when it is at least half of maxval.
BinaryMaskVolume read_mask_pgm(const std::filesystem::path& path);

/// Binary P5 with maxval 65535 (big-endian samples).
void write_silhouette_pgm(const std::filesystem::path& path, const SilhouetteImage& img);
/// Any P5, normalized by maxval.
SilhouetteImage read_silhouette_pgm(const std::filesystem::path& path);

}  // namespace geoedit
