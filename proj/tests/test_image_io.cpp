#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "geoedit/errors.hpp"
#include "geoedit/image_io.hpp"
#include "test_util.hpp"

using namespace geoedit;

namespace {

RgbImage random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  RgbImage img(h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("ppm round trip equals 8-bit quantization") {
  test::TempDir dir("ppm");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const RgbImage img = random_image(rng, 1 + i % 7, 1 + (i * 3) % 11);
    write_ppm(dir / "a.ppm", img);
    const RgbImage back = read_ppm(dir / "a.ppm");
    REQUIRE(back == quantize8(img));
    for (std::size_t k = 0; k < img.data.size(); ++k) {
      const double clamped = std::min(1.0, std::max(0.0, img.data[k]));
      // Independent quantizer: nearest of the 256 levels.
      REQUIRE(back.data[k] == std::round(clamped * 255.0) / 255.0);
    }
    // Quantized data survives a second trip unchanged.
    write_ppm(dir / "b.ppm", back);
    REQUIRE(read_ppm(dir / "b.ppm") == back);
  }
}

TEST_CASE("ppm reader handles comments and rejects bad files") {
  test::TempDir dir("ppm_bad");
  write_bytes(dir / "c.ppm", std::string("P6\n# a comment\n2 1\n# another\n255\n") +
                                 std::string("\xff\x00\x00\x00\x80\xff", 6));
  const RgbImage img = read_ppm(dir / "c.ppm");
  CHECK(img.height == 1);
  CHECK(img.width == 2);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 1, 1) == 128.0 / 255.0);
  CHECK(img.at(0, 1, 2) == 1.0);

  write_bytes(dir / "trunc.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(read_ppm(dir / "trunc.ppm"), IoError);
  write_bytes(dir / "magic.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(dir / "magic.ppm"), IoError);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), IoError);
}

TEST_CASE("mask pgm round trip") {
  test::TempDir dir("pgm");
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.4);
  BinaryMaskVolume m(1, 9, 13);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 13; ++c) m.set(0, r, c, coin(rng));
  write_mask_pgm(dir / "sub" / "m.pgm", m);
  CHECK(read_mask_pgm(dir / "sub" / "m.pgm") == m);

  // 16-bit input thresholds at half of maxval.
  std::string px = "P5\n3 1\n1000\n";
  for (int v : {0, 499, 500}) {
    px.push_back(static_cast<char>(v >> 8));
    px.push_back(static_cast<char>(v & 0xff));
  }
  write_bytes(dir / "w.pgm", px);
  const BinaryMaskVolume w = read_mask_pgm(dir / "w.pgm");
  CHECK(w.at(0, 0, 0) == 0);
  CHECK(w.at(0, 0, 1) == 0);
  CHECK(w.at(0, 0, 2) == 1);
}

TEST_CASE("silhouette pgm keeps 16-bit precision") {
  test::TempDir dir("sil");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SilhouetteImage s(7, 5);
  for (double& v : s.data) v = u(rng);
  write_silhouette_pgm(dir / "s.pgm", s);
  const SilhouetteImage back = read_silhouette_pgm(dir / "s.pgm");
  REQUIRE(back.height == 7);
  REQUIRE(back.width == 5);
  for (std::size_t k = 0; k < s.data.size(); ++k)
    CHECK(back.data[k] == std::round(s.data[k] * 65535.0) / 65535.0);
}
