#pragma once

#include <array>

#include "twins/core/nn.hpp"
#include "twins/model/backbone.hpp"
#include "twins/model/refinement.hpp"

namespace twins {

// Hidden states resized and projected to match contextual stages 1-3.
template <typename T>
struct AlignedHiddenStatesT {
  std::array<TensorT<T>, 3> levels;
};

// Contextual stages with geometric cues fused in; stage 4 passes through.
template <typename T>
struct FusedFeaturesT {
  std::array<TensorT<T>, 4> levels;
};

using AlignedHiddenStates = AlignedHiddenStatesT<float>;
using FusedFeatures = FusedFeaturesT<float>;

enum class CtaMode { kAttention, kAdd, kIdentity };

struct CtaConfig {
  CtaMode mode = CtaMode::kAttention;
  int heads = 1;
  float eps = 1e-6f;
  bool residual = true;  // add the query source to the MLP output
};

CtaMode parse_cta_mode(const std::string& s);

// Linear-attention core on projected token matrices: with phi = ELU + 1,
//   out = phi(Q) (phi(K)^T V) / (phi(Q) . sum_n phi(K)_n + eps)
// computed in the associativity order that never materializes the N x M map.
template <typename T>
TensorT<T> linear_attention_core(const TensorT<T>& q, const TensorT<T>& k,
                                 const TensorT<T>& v, T eps);

// One attention stage: learned 1x1 q/k/v projections, multi-head core,
// RMSNorm + 2-layer GELU MLP, residual from the query source.
template <typename T>
class LinearAttentionT {
 public:
  LinearAttentionT() = default;
  LinearAttentionT(ParamRegistryT<T>& reg, const std::string& prefix,
                   int channels, const CtaConfig& cfg);
  // Maps (C,H,W) -> (C,H,W); kv may have a different spatial extent.
  TensorT<T> forward(const TensorT<T>& query_src,
                     const TensorT<T>& kv_src) const;
  // Attention output before norm/MLP/residual, tokens (N,C).
  TensorT<T> attend_tokens(const TensorT<T>& q_tokens,
                           const TensorT<T>& kv_tokens) const;

 private:
  LinearT<T> proj_q_, proj_k_, proj_v_;
  RMSNormT<T> norm_;
  LinearT<T> mlp_in_, mlp_out_;
  CtaConfig cfg_;
  int channels_ = 0;
};

// Two chained stages per level: project hidden states into the contextual
// space, then selectively aggregate the contextual features.
template <typename T>
class CrossTaskAdapterT {
 public:
  CrossTaskAdapterT() = default;
  CrossTaskAdapterT(ParamRegistryT<T>& reg, const std::string& prefix,
                    const std::array<int, 4>& stage_channels, int hidden_width,
                    const CtaConfig& cfg);

  AlignedHiddenStatesT<T> align_hidden(
      const HiddenStateSetT<T>& hidden,
      const std::array<std::pair<int, int>, 3>& stage_sizes) const;

  FusedFeaturesT<T> fuse(const FeaturePyramidT<T>& contextual,
                         const AlignedHiddenStatesT<T>& hidden) const;

  const CtaConfig& config() const { return cfg_; }

 private:
  std::array<Conv2dT<T>, 3> hidden_proj_;
  std::array<LinearAttentionT<T>, 3> project_stage_;  // G_i from (F_i, H~_i)
  std::array<LinearAttentionT<T>, 3> fuse_stage_;     // F_i^f from (G_i, F_i)
  std::array<Conv2dT<T>, 3> add_proj_;  // element-wise-add baseline path
  CtaConfig cfg_;
};

using LinearAttention = LinearAttentionT<float>;
using CrossTaskAdapter = CrossTaskAdapterT<float>;

// (C,H,W) <-> (H*W, C) token helpers.
template <typename T>
TensorT<T> map_to_tokens(const TensorT<T>& x);
template <typename T>
TensorT<T> tokens_to_map(const TensorT<T>& t, int h, int w);

}  // namespace twins
