#pragma once

#include <array>

#include "twins/core/nn.hpp"
#include "twins/model/correlation.hpp"

namespace twins {

// GRU hidden states at 1/4, 1/8, 1/16 resolution; tanh-bounded.
template <typename T>
struct HiddenStateSetT {
  std::array<TensorT<T>, 3> levels;
  int iteration = 0;
};

// K full-resolution correspondence fields plus the final hidden states.
template <typename T>
struct IterationTraceT {
  std::vector<TensorT<T>> fields;
  HiddenStateSetT<T> final_hidden;
};

using HiddenStateSet = HiddenStateSetT<float>;
using IterationTrace = IterationTraceT<float>;

struct RefineConfig {
  int iters = 8;
  int hidden_width = 96;
  float gamma = 0.9f;  // per-iteration supervision decay, used by the trainer
  int lookup_radius = 4;
  int corr_levels = 3;
};

// Iterative refinement: recurrent multi-level gated updates fed by aligned
// contextual features each iteration, correlation lookups at the finest
// level, and learned convex 4x upsampling of the working field.
template <typename T>
class RefinementT {
 public:
  RefinementT() = default;
  RefinementT(ParamRegistryT<T>& reg, const std::string& prefix,
              const RefineConfig& cfg, CorrMode mode);

  // hidden = tanh(aligned early features), level resolutions 1/4, 1/8, 1/16.
  HiddenStateSetT<T> init_hidden(
      const std::array<TensorT<T>, 3>& aligned_early) const;

  // One full Eq.-style update across the three levels. `current` is the
  // working field at 1/4 resolution (level-0 pixel units). Returns updated
  // states and the regressed delta (second component exactly zero in stereo).
  std::pair<HiddenStateSetT<T>, TensorT<T>> gru_step(
      const HiddenStateSetT<T>& h, const std::array<TensorT<T>, 3>& aligned_late,
      const TensorT<T>& corr_feat, const TensorT<T>& current) const;

  IterationTraceT<T> refine(const CorrelationPyramidT<T>& pyr,
                            const std::array<TensorT<T>, 3>& aligned_early,
                            const std::array<TensorT<T>, 3>& aligned_late,
                            int iters, TensorT<T> init_field = {}) const;

  // Softmaxed convex-combination weights (9, 16, H/4, W/4) from the finest
  // hidden state; each output pixel's 9 weights sum to 1.
  TensorT<T> upsample_weights(const TensorT<T>& h_finest) const;

  const RefineConfig& config() const { return cfg_; }
  CorrMode mode() const { return mode_; }

 private:
  struct GruCell {
    SepConv2dT<T> wz, wr, wq;
  };
  TensorT<T> cell_update(const GruCell& cell, const TensorT<T>& h,
                         const TensorT<T>& x) const;
  TensorT<T> motion_features(const TensorT<T>& corr_feat,
                             const TensorT<T>& current) const;
  TensorT<T> regress_delta(const TensorT<T>& h_finest) const;

  RefineConfig cfg_;
  CorrMode mode_ = CorrMode::kStereo;
  Conv2dT<T> motion_in_;
  SepConv2dT<T> motion_mix_;
  std::array<GruCell, 3> cells_;
  SepConv2dT<T> delta_mix_;
  Conv2dT<T> delta_out_;
  Conv2dT<T> mask_head_;
};

using Refinement = RefinementT<float>;

}  // namespace twins
