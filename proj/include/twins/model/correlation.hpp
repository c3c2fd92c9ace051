#pragma once

#include <vector>

#include "twins/core/ops.hpp"
#include "twins/data/synth.hpp"

namespace twins {

// All-pairs correlation pyramid. Level 0 is the raw volume; each further
// level average-pools the source dimension(s) by 2. Stereo volumes are
// row-restricted: (H, Wt, Ws). Flow volumes are dense: (Ht, Wt, Hs, Ws).
template <typename T>
struct CorrelationPyramidT {
  std::vector<TensorT<T>> levels;
  CorrMode mode = CorrMode::kStereo;
  int base_h = 0, base_w = 0;
};

using CorrelationPyramid = CorrelationPyramidT<float>;

// V[p,q] = sum_c Ft(p,c) * Fs(q,c); unnormalized inner product.
template <typename T>
TensorT<T> build_volume(const TensorT<T>& f_t, const TensorT<T>& f_s,
                        CorrMode mode);

template <typename T>
CorrelationPyramidT<T> build_pyramid(const TensorT<T>& volume, CorrMode mode,
                                     int num_levels = 3);

// Samples correlations around the position displaced by `field` (values in
// level-0 pixels; stereo looks up at x - d, flow at x + u / y + v), a
// (2*radius+1)^dims window per level, bilinear, clamped at volume borders.
// Gradients flow into the pyramid levels; the field is treated as constant.
// Output channels: levels * (2r+1) in stereo, levels * (2r+1)^2 in flow.
template <typename T>
TensorT<T> corr_lookup(const CorrelationPyramidT<T>& pyr,
                       const TensorT<T>& field, int radius);

inline int corr_feature_channels(CorrMode mode, int levels, int radius) {
  const int win = 2 * radius + 1;
  return mode == CorrMode::kStereo ? levels * win : levels * win * win;
}

}  // namespace twins
