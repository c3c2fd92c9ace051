#include "twins/data/augment.hpp"

#include <algorithm>
#include <cmath>

namespace twins {
namespace {

Tensor crop_chw(const Tensor& x, int x0, int y0, int cw, int ch) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (x0 < 0 || y0 < 0 || x0 + cw > w || y0 + ch > h)
    throw ContractError("crop outside image bounds");
  Tensor out = Tensor::zeros({c, ch, cw});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ch; ++y)
      std::copy_n(x.data() + (size_t(ci) * h + y0 + y) * w + x0, cw,
                  out.data() + (size_t(ci) * ch + y) * cw);
  return out;
}

Tensor flip_chw(const Tensor& x, bool hflip, bool vflip) {
  if (!hflip && !vflip) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::zeros({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2) {
        const int sy = vflip ? h - 1 - y : y;
        const int sx = hflip ? w - 1 - x2 : x2;
        out.data()[(size_t(ci) * h + y) * w + x2] =
            x.data()[(size_t(ci) * h + sy) * w + sx];
      }
  return out;
}

ClassMap crop_flip_map(const ClassMap& m, const AugGeometry& g) {
  ClassMap out;
  out.h = g.crop_h;
  out.w = g.crop_w;
  out.ids.resize(size_t(g.crop_h) * g.crop_w);
  for (int y = 0; y < g.crop_h; ++y)
    for (int x = 0; x < g.crop_w; ++x) {
      const int sy0 = g.vflip ? g.crop_h - 1 - y : y;
      const int sx0 = g.hflip ? g.crop_w - 1 - x : x;
      out.ids[size_t(y) * g.crop_w + x] =
          m.at(g.crop_y + sy0, g.crop_x + sx0);
    }
  return out;
}

}  // namespace

AugmentationPair::AugmentationPair(const AugmentationConfig& cfg, CorrMode mode,
                                   int img_h, int img_w, Rng& rng) {
  geom_.crop_h = cfg.crop_h > 0 ? cfg.crop_h : img_h;
  geom_.crop_w = cfg.crop_w > 0 ? cfg.crop_w : img_w;
  if (geom_.crop_h > img_h || geom_.crop_w > img_w)
    throw ConfigError("crop larger than image");
  if (geom_.crop_h % 32 != 0 || geom_.crop_w % 32 != 0)
    throw ConfigError("crop size must be divisible by 32");
  if (cfg.enabled) {
    geom_.crop_x = rng.uniform_int(0, img_w - geom_.crop_w);
    geom_.crop_y = rng.uniform_int(0, img_h - geom_.crop_h);
    if (cfg.allow_flip) {
      // Stereo keeps horizontal orientation: a horizontal flip cannot be
      // transferred to the labels exactly near occlusions.
      geom_.hflip = mode == CorrMode::kFlow && rng.bernoulli(0.5);
      geom_.vflip = rng.bernoulli(0.5);
    }
    if (cfg.photometric) {
      photo_.enabled = true;
      photo_.brightness = float(rng.uniform(0.85, 1.15));
      photo_.contrast = float(rng.uniform(0.85, 1.15));
      photo_.gamma = float(rng.uniform(0.85, 1.18));
      for (auto& g : photo_.channel_gain) g = float(rng.uniform(0.92, 1.08));
      photo_.occlude = rng.bernoulli(0.5);
      if (photo_.occlude) {
        photo_.occ_w = rng.uniform_int(geom_.crop_w / 8, geom_.crop_w / 3);
        photo_.occ_h = rng.uniform_int(geom_.crop_h / 8, geom_.crop_h / 3);
        photo_.occ_x = rng.uniform_int(0, geom_.crop_w - photo_.occ_w);
        photo_.occ_y = rng.uniform_int(0, geom_.crop_h - photo_.occ_h);
      }
    }
  }
}

AugmentationPair::AugmentationPair(const AugGeometry& weak,
                                   const AugGeometry& strong,
                                   const PhotometricParams& photo)
    : geom_(weak), photo_(photo) {
  if (!(weak == strong))
    throw ContractError(
        "augmentation pair: weak/strong geometry mismatch invalidates "
        "pseudo-label transfer");
}

ImageCollection apply_geometry(const ImageCollection& c, const AugGeometry& g) {
  if (g.hflip && c.mode == CorrMode::kStereo)
    throw ContractError("horizontal flip is not defined for stereo pairs");
  ImageCollection out;
  out.mode = c.mode;
  out.target_image =
      flip_chw(crop_chw(c.target_image, g.crop_x, g.crop_y, g.crop_w, g.crop_h),
               g.hflip, g.vflip);
  out.source_image =
      flip_chw(crop_chw(c.source_image, g.crop_x, g.crop_y, g.crop_w, g.crop_h),
               g.hflip, g.vflip);
  if (c.has_segmentation()) out.gt_segmentation = crop_flip_map(c.gt_segmentation, g);
  if (c.has_correspondence()) {
    auto corr =
        flip_chw(crop_chw(c.gt_correspondence, g.crop_x, g.crop_y, g.crop_w,
                          g.crop_h),
                 g.hflip, g.vflip);
    // Component sign rules under flips.
    const int64_t hw = int64_t(g.crop_h) * g.crop_w;
    if (c.mode == CorrMode::kFlow) {
      if (g.hflip)
        for (int64_t i = 0; i < hw; ++i) corr.data()[i] = -corr.data()[i];
      if (g.vflip)
        for (int64_t i = 0; i < hw; ++i)
          corr.data()[hw + i] = -corr.data()[hw + i];
    }
    out.gt_correspondence = corr;
    Tensor valid =
        c.gt_validity.defined()
            ? flip_chw(crop_chw(c.gt_validity, g.crop_x, g.crop_y, g.crop_w,
                                g.crop_h),
                       g.hflip, g.vflip)
            : Tensor::full({1, g.crop_h, g.crop_w}, 1.0f);
    // The matching source content must still fall inside the crop.
    for (int y = 0; y < g.crop_h; ++y)
      for (int x = 0; x < g.crop_w; ++x) {
        const float u = corr.data()[size_t(y) * g.crop_w + x];
        const float v = corr.data()[hw + size_t(y) * g.crop_w + x];
        double qx, qy;
        if (c.mode == CorrMode::kStereo) {
          qx = double(x) - double(u);
          qy = double(y);
        } else {
          qx = double(x) + double(u);
          qy = double(y) + double(v);
        }
        if (qx < 0.0 || qx > double(g.crop_w - 1) || qy < 0.0 ||
            qy > double(g.crop_h - 1))
          valid.data()[size_t(y) * g.crop_w + x] = 0.0f;
      }
    out.gt_validity = valid;
  }
  return out;
}

ImageCollection AugmentationPair::apply_weak(const ImageCollection& c) const {
  return apply_geometry(c, geom_);
}

ImageCollection AugmentationPair::apply_strong(const ImageCollection& c) const {
  ImageCollection out = apply_geometry(c, geom_);
  if (!photo_.enabled) return out;
  auto jitter = [&](Tensor& img, bool is_source) {
    const int h = img.dim(1), w = img.dim(2);
    const int64_t hw = int64_t(h) * w;
    for (int ci = 0; ci < 3; ++ci) {
      float* d = img.data() + ci * hw;
      const float gain = photo_.brightness * photo_.channel_gain[size_t(ci)];
      for (int64_t i = 0; i < hw; ++i) {
        float v = d[i];
        v = 0.5f + (v - 0.5f) * photo_.contrast;
        v = std::clamp(v * gain, 0.0f, 1.0f);
        d[i] = std::pow(v, photo_.gamma);
      }
    }
    if (is_source && photo_.occlude) {
      // Asymmetric occlusion: mean fill on the source view only, so the
      // label geometry is untouched.
      for (int ci = 0; ci < 3; ++ci) {
        float* d = img.data() + ci * hw;
        double mean = 0.0;
        for (int64_t i = 0; i < hw; ++i) mean += d[i];
        const float fill = float(mean / double(hw));
        for (int y = photo_.occ_y; y < photo_.occ_y + photo_.occ_h; ++y)
          for (int x = photo_.occ_x; x < photo_.occ_x + photo_.occ_w; ++x)
            d[size_t(y) * w + x] = fill;
      }
    }
  };
  jitter(out.target_image, false);
  jitter(out.source_image, true);
  return out;
}

std::pair<Tensor, Tensor> AugmentationPair::transfer_labels(
    const Tensor& corr, const Tensor& valid) const {
  return {corr, valid};
}

}  // namespace twins
