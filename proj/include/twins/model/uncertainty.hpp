#pragma once

#include "twins/core/nn.hpp"
#include "twins/model/refinement.hpp"

namespace twins {

struct UncertaintyConfig {
  int iters = 8;       // K; the head consumes K*(K-1) channels
  int hidden = 64;
  int bins = 32;       // soft histogram bins for the KL alignment term
  float lambda_kl = 0.1f;
  float logsig_clamp = 6.0f;
};

template <typename T>
struct LossValueT {
  TensorT<T> value;
  bool empty_mask = false;
};
using LossValue = LossValueT<float>;

// Aleatoric scale head: squared pairwise differences of the iterative fields
// (i < j, 2 channels each) through a pixel-wise 3-layer MLP to log-sigma,
// clamped, exponentiated. Output (1,H,W), strictly positive.
template <typename T>
class UncertaintyHeadT {
 public:
  UncertaintyHeadT() = default;
  UncertaintyHeadT(ParamRegistryT<T>& reg, const std::string& prefix,
                   const UncertaintyConfig& cfg);

  TensorT<T> estimate(const std::vector<TensorT<T>>& fields) const;
  TensorT<T> estimate(const IterationTraceT<T>& trace) const {
    return estimate(trace.fields);
  }

  const UncertaintyConfig& config() const { return cfg_; }

 private:
  UncertaintyConfig cfg_;
  Conv2dT<T> fc1_, fc2_, fc3_;
};

using UncertaintyHead = UncertaintyHeadT<float>;

// Mean over valid pixels of log(2 sigma) + |pred - gt|_1 / sigma.
// pred/gt (2,H,W); sigma (1,H,W); valid (1,H,W) in {0,1}, constant.
template <typename T>
LossValueT<T> laplace_nll(const TensorT<T>& pred, const TensorT<T>& gt,
                          const TensorT<T>& sigma, const TensorT<T>& valid);

// KL(hist(residuals) || hist(sigma)) between soft log-spaced histograms over
// the valid pixels. residuals/sigma flattened to the same element count.
template <typename T>
LossValueT<T> kl_alignment(const TensorT<T>& sigma, const TensorT<T>& residuals,
                           const TensorT<T>& valid, int bins = 32,
                           T log_lo = T(-6), T log_hi = T(6));

// Per-pixel L1 residual magnitude |pred-gt|_1 as a (H*W) tensor.
template <typename T>
TensorT<T> l1_residual_map(const TensorT<T>& pred, const TensorT<T>& gt);

}  // namespace twins
