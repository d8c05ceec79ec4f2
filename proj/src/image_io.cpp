#include "geoedit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <string>

#include "geoedit/errors.hpp"

namespace geoedit {
namespace {

struct Netpbm {
  int width = 0, height = 0, maxval = 0, channels = 0;
  std::vector<std::uint16_t> samples;
};

// Skips whitespace and '#' comments between header tokens.
int read_header_int(std::istream& in, const std::filesystem::path& path) {
  for (;;) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v) || v <= 0) throw IoError("malformed netpbm header in " + path.string());
  return v;
}

Netpbm read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  Netpbm img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw IoError(path.string() + " is not a binary PGM/PPM");
  }
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  img.maxval = read_header_int(in, path);
  if (img.maxval > 65535) throw IoError("maxval out of range in " + path.string());
  in.get();  // single whitespace after maxval

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  const int bytes = img.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError("truncated pixel data in " + path.string());
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    img.samples[i] = bytes == 2 ? static_cast<std::uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1]) : raw[i];
  return img;
}

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height,
                  int maxval, const std::vector<std::uint16_t>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << "\n" << width << " " << height << "\n" << maxval << "\n";
  std::vector<unsigned char> raw;
  raw.reserve(samples.size() * 2);
  for (std::uint16_t s : samples) {
    if (maxval > 255) raw.push_back(static_cast<unsigned char>(s >> 8));
    raw.push_back(static_cast<unsigned char>(s & 0xff));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint16_t quantize(double v, int maxval) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::uint16_t> s(img.data.size());
  std::transform(img.data.begin(), img.data.end(), s.begin(),
                 [](double v) { return quantize(v, 255); });
  write_netpbm(path, "P6", img.width, img.height, 255, s);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const Netpbm p = read_netpbm(path);
  if (p.channels != 3) throw IoError(path.string() + " is not a PPM");
  RgbImage img(p.height, p.width);
  for (std::size_t i = 0; i < p.samples.size(); ++i)
    img.data[i] = static_cast<double>(p.samples[i]) / p.maxval;
  return img;
}

RgbImage quantize8(const RgbImage& img) {
  RgbImage out = img;
  for (double& v : out.data) v = quantize(v, 255) / 255.0;
  return out;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMaskVolume& m, int frame) {
  const auto f = m.frame(frame);
  std::vector<std::uint16_t> s(f.size());
  std::transform(f.begin(), f.end(), s.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
  write_netpbm(path, "P5", m.width(), m.height(), 255, s);
}

BinaryMaskVolume read_mask_pgm(const std::filesystem::path& path) {
  const Netpbm p = read_netpbm(path);
  if (p.channels != 1) throw IoError(path.string() + " is not a PGM");
  std::vector<std::uint8_t> bits(p.samples.size());
  std::transform(p.samples.begin(), p.samples.end(), bits.begin(),
                 [&](std::uint16_t v) { return 2 * v >= p.maxval ? 1 : 0; });
  return BinaryMaskVolume(1, p.height, p.width, std::move(bits));
}

void write_silhouette_pgm(const std::filesystem::path& path, const SilhouetteImage& img) {
  std::vector<std::uint16_t> s(img.data.size());
  std::transform(img.data.begin(), img.data.end(), s.begin(),
                 [](double v) { return quantize(v, 65535); });
  write_netpbm(path, "P5", img.width, img.height, 65535, s);
}

SilhouetteImage read_silhouette_pgm(const std::filesystem::path& path) {
  const Netpbm p = read_netpbm(path);
  if (p.channels != 1) throw IoError(path.string() + " is not a PGM");
  SilhouetteImage img(p.height, p.width);
  for (std::size_t i = 0; i < p.samples.size(); ++i)
    img.data[i] = static_cast<double>(p.samples[i]) / p.maxval;
  return img;
}

}  // namespace geoedit
