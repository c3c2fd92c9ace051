#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "twins/data/synth.hpp"

using namespace twins;
namespace fs = std::filesystem;

namespace {

// Independent warp oracle: bilinearly samples the source image at the
// position each correspondence points to and compares with the target.
struct WarpCheck {
  double frac_consistent = 0.0;  // of valid pixels, within tol
  int64_t valid_count = 0;
};

float sample_bilinear(const float* img, int h, int w, double x, double y) {
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const int x0 = int(x), y0 = int(y);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img[y0 * w + x0] * (1 - fx) + img[y0 * w + x1] * fx;
  const double bot = img[y1 * w + x0] * (1 - fx) + img[y1 * w + x1] * fx;
  return float(top * (1 - fy) + bot * fy);
}

WarpCheck warp_consistency(const ImageCollection& c, double tol) {
  const int h = c.height(), w = c.width();
  const int64_t hw = int64_t(h) * w;
  WarpCheck r;
  int64_t ok = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (c.gt_validity.data()[y * w + x] == 0.0f) continue;
      ++r.valid_count;
      const float u = c.gt_correspondence.data()[y * w + x];
      const float v = c.gt_correspondence.data()[hw + y * w + x];
      double qx, qy;
      if (c.mode == CorrMode::kStereo) {
        qx = x - double(u);
        qy = y;
      } else {
        qx = x + double(u);
        qy = y + double(v);
      }
      bool good = true;
      for (int ch = 0; ch < 3; ++ch) {
        const float got = sample_bilinear(c.source_image.data() + ch * hw, h,
                                          w, qx, qy);
        const float want = c.target_image.data()[ch * hw + y * w + x];
        if (std::fabs(double(got) - double(want)) > tol) good = false;
      }
      if (good) ++ok;
    }
  r.frac_consistent =
      r.valid_count ? double(ok) / double(r.valid_count) : 0.0;
  return r;
}

SceneSpec small_spec() {
  SceneSpec s;
  s.num_objects = 4;
  s.height = 64;
  s.width = 96;
  s.num_classes = 4;
  s.texture_seed = 42;
  s.max_displacement = 12.0f;
  return s;
}

}  // namespace

TEST_CASE("generate_scene: single fronto-parallel plane gives a constant field") {
  SceneSpec s = small_spec();
  s.num_objects = 1;
  s.depth_min = s.depth_max = 2.0f;
  auto c = generate_scene(s, CorrMode::kStereo);
  const float d0 = c.gt_correspondence.data()[0];
  for (int64_t i = 0; i < int64_t(s.height) * s.width; ++i)
    CHECK(c.gt_correspondence.data()[i] == d0);
  for (int32_t id : c.gt_segmentation.ids) CHECK(id == 0);
}

TEST_CASE("generate_scene: stereo fields are horizontal, bounded, non-negative") {
  auto c = generate_scene(small_spec(), CorrMode::kStereo);
  const int64_t hw = int64_t(c.height()) * c.width();
  for (int64_t i = 0; i < hw; ++i) {
    CHECK(c.gt_correspondence.data()[hw + i] == 0.0f);
    CHECK(c.gt_correspondence.data()[i] >= 0.0f);
    CHECK(c.gt_correspondence.data()[i] <= 12.0f);
  }
}

TEST_CASE("generate_scene: warp consistency at valid pixels") {
  for (auto mode : {CorrMode::kStereo, CorrMode::kFlow}) {
    for (uint64_t seed : {1u, 2u, 3u}) {
      SceneSpec s = small_spec();
      s.texture_seed = seed;
      auto c = generate_scene(s, mode);
      auto r = warp_consistency(c, 1e-3);
      CHECK(r.valid_count > 0);
      CHECK(r.frac_consistent >= 0.99);
    }
  }
}

TEST_CASE("generate_scene: deterministic in texture_seed") {
  auto a = generate_scene(small_spec(), CorrMode::kFlow);
  auto b = generate_scene(small_spec(), CorrMode::kFlow);
  CHECK(a.target_image.vec() == b.target_image.vec());
  CHECK(a.source_image.vec() == b.source_image.vec());
  CHECK(a.gt_correspondence.vec() == b.gt_correspondence.vec());
  CHECK(a.gt_segmentation.ids == b.gt_segmentation.ids);
}

TEST_CASE("generate_scene: class ids in range and size validation") {
  auto c = generate_scene(small_spec(), CorrMode::kStereo);
  for (int32_t id : c.gt_segmentation.ids) {
    CHECK(id >= 0);
    CHECK(id < 4);
  }
  SceneSpec bad = small_spec();
  bad.height = 60;  // not divisible by 32
  CHECK_THROWS_AS(generate_scene(bad, CorrMode::kStereo), ConfigError);
  bad = small_spec();
  bad.num_objects = 0;
  CHECK_THROWS_AS(generate_scene(bad, CorrMode::kStereo), ConfigError);
}

TEST_CASE("collection io: round trip is exact field by field") {
  const std::string dir = "build_test_io/roundtrip";
  fs::remove_all("build_test_io");
  auto c = generate_scene(small_spec(), CorrMode::kFlow);
  write_collection(c, dir);
  auto r = read_collection(dir);
  CHECK(r.target_image.vec() == c.target_image.vec());
  CHECK(r.source_image.vec() == c.source_image.vec());
  CHECK(r.gt_correspondence.vec() == c.gt_correspondence.vec());
  CHECK(r.gt_validity.vec() == c.gt_validity.vec());
  CHECK(r.gt_segmentation.ids == c.gt_segmentation.ids);
  CHECK(r.mode == CorrMode::kFlow);
  fs::remove_all("build_test_io");
}

TEST_CASE("field bin: wrong magic and dimension mismatch raise format errors") {
  fs::create_directories("build_test_io");
  const std::string path = "build_test_io/bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    const char junk[24] = {'N', 'O', 'P', 'E'};
    os.write(junk, sizeof(junk));
  }
  CHECK_THROWS_AS(read_field_bin(path, 2), FormatError);
  CHECK_THROWS_AS(read_field_bin("build_test_io/missing.bin", 2), FormatError);

  // Truncated payload.
  auto t = Tensor::zeros({2, 4, 4});
  write_field_bin("build_test_io/t.bin", t);
  {
    std::ifstream is("build_test_io/t.bin", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() - 8);
    std::ofstream os("build_test_io/trunc.bin", std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_AS(read_field_bin("build_test_io/trunc.bin", 2), FormatError);
  fs::remove_all("build_test_io");
}

TEST_CASE("field bin: byte layout of a known 2x2 field") {
  // Hand-assembled expectation: TWNS | ver 1 | H=2 | W=2 | C=1, then the
  // four floats 1.0, -2.0, 0.5, 3.25 row-major, all little endian.
  fs::create_directories("build_test_io");
  auto t = Tensor::from_data({1, 2, 2}, {1.0f, -2.0f, 0.5f, 3.25f});
  write_field_bin("build_test_io/layout.bin", t);
  std::ifstream is("build_test_io/layout.bin", std::ios::binary);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  const uint8_t expected[] = {
      'T', 'W', 'N', 'S',
      1, 0, 0, 0,   // version
      2, 0, 0, 0,   // H
      2, 0, 0, 0,   // W
      1, 0, 0, 0,   // channels
      0x00, 0x00, 0x80, 0x3f,  // 1.0f
      0x00, 0x00, 0x00, 0xc0,  // -2.0f
      0x00, 0x00, 0x00, 0x3f,  // 0.5f
      0x00, 0x00, 0x50, 0x40,  // 3.25f
  };
  REQUIRE(bytes.size() == sizeof(expected));
  for (size_t i = 0; i < sizeof(expected); ++i) CHECK(bytes[i] == expected[i]);
  fs::remove_all("build_test_io");
}
