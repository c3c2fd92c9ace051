#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twins/core/tensor.hpp"

namespace twins {

enum class CorrMode { kStereo, kFlow };

// Integer class labels, H x W.
struct ClassMap {
  int h = 0, w = 0;
  std::vector<int32_t> ids;
  int32_t at(int y, int x) const { return ids[size_t(y) * w + size_t(x)]; }
  int32_t& at(int y, int x) { return ids[size_t(y) * w + size_t(x)]; }
  bool empty() const { return ids.empty(); }
};

// A target/source pair: stereo (left/right) or consecutive frames.
//
// Correspondence convention, channel 0 = u, channel 1 = v, at target pixel
// (x, y):
//   stereo: u = disparity d >= 0, v = 0; source position is (x - d, y).
//   flow:   source position is (x + u, y + v).
// Images are 8-bit quantized floats in [0,1] so PNG round-trips are exact.
struct ImageCollection {
  Tensor target_image;       // (3,H,W)
  Tensor source_image;       // (3,H,W)
  Tensor gt_correspondence;  // (2,H,W), optional
  Tensor gt_validity;        // (1,H,W) in {0,1}, optional
  ClassMap gt_segmentation;  // optional
  CorrMode mode = CorrMode::kStereo;

  int height() const { return target_image.dim(1); }
  int width() const { return target_image.dim(2); }
  bool has_correspondence() const { return gt_correspondence.defined(); }
  bool has_segmentation() const { return !gt_segmentation.empty(); }
};

struct SceneSpec {
  int num_objects = 4;        // layers including the background plane
  float depth_min = 1.0f;
  float depth_max = 4.0f;
  uint64_t texture_seed = 1;
  int height = 96;            // divisible by 32
  int width = 128;            // divisible by 32
  int num_classes = 5;
  float max_displacement = 24.0f;  // displacement of a layer at depth_min, px
};

// Layered textured planes with per-layer integer translation; warp
// consistency between the two rendered views is exact at valid pixels.
// Deterministic in texture_seed.
ImageCollection generate_scene(const SceneSpec& spec, CorrMode mode);

void write_collection(const ImageCollection& c, const std::string& dir);
ImageCollection read_collection(const std::string& dir);

// corr.bin / valid.bin codec: magic TWNS | u32 version=1 | u32 H | u32 W |
// u32 channels | row-major (H,W,C) float32 LE payload.
void write_field_bin(const std::string& path, const Tensor& chw);
Tensor read_field_bin(const std::string& path, int expected_channels);

// Sorted collection ids under a split directory.
std::vector<std::string> list_collections(const std::string& split_dir);

}  // namespace twins
