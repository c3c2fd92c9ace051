#pragma once

#include <array>

#include "twins/core/rng.hpp"
#include "twins/data/synth.hpp"

namespace twins {

// Shared geometric transform. Weak and strong inputs of one step always carry
// the same geometry so pseudo-label transfer is the identity; the pair
// constructor enforces that.
struct AugGeometry {
  int crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
  bool hflip = false;  // flow mode only: u component negates
  bool vflip = false;  // flow: v negates; stereo: disparity unchanged

  bool operator==(const AugGeometry&) const = default;
};

struct PhotometricParams {
  bool enabled = false;
  float brightness = 1.0f;
  float contrast = 1.0f;
  float gamma = 1.0f;
  std::array<float, 3> channel_gain{1.0f, 1.0f, 1.0f};
  bool occlude = false;  // rectangle on the source image only
  int occ_x = 0, occ_y = 0, occ_w = 0, occ_h = 0;
};

struct AugmentationConfig {
  bool enabled = true;
  int crop_h = 0, crop_w = 0;  // 0 keeps the full image
  bool allow_flip = true;
  bool photometric = true;  // strong path: jitter + gamma + occlusion
};

class AugmentationPair {
 public:
  // Samples one shared geometry plus strong-side photometric parameters.
  AugmentationPair(const AugmentationConfig& cfg, CorrMode mode, int img_h,
                   int img_w, Rng& rng);
  // Explicit geometries; mismatched crops/flips are a contract error.
  AugmentationPair(const AugGeometry& weak, const AugGeometry& strong,
                   const PhotometricParams& photo);

  // Geometry only: teacher input.
  ImageCollection apply_weak(const ImageCollection& c) const;
  // Same geometry plus photometric perturbation: student input.
  ImageCollection apply_strong(const ImageCollection& c) const;

  // Pseudo-labels predicted in the weak frame, expressed in the strong
  // frame. Geometries are identical by construction, so this is the
  // identity; it exists as the contract point.
  std::pair<Tensor, Tensor> transfer_labels(const Tensor& corr,
                                            const Tensor& valid) const;

  const AugGeometry& geometry() const { return geom_; }

 private:
  AugGeometry geom_;
  PhotometricParams photo_;
};

// Applies a geometry to a full collection (images, labels, validity).
ImageCollection apply_geometry(const ImageCollection& c, const AugGeometry& g);

}  // namespace twins
