#pragma once

#include <string>
#include <utility>
#include <vector>

#include "twins/core/ops.hpp"
#include "twins/core/rng.hpp"

namespace twins {

// Ordered named parameter store. Construction order is fixed by module code,
// which makes init, EMA pairing, and checkpoints deterministic.
template <typename T>
class ParamRegistryT {
 public:
  explicit ParamRegistryT(uint64_t seed) : rng_(Rng::derive(seed, 0xC0DE)) {}

  TensorT<T> zeros(const std::string& name, Shape shape);
  TensorT<T> constant(const std::string& name, Shape shape, T v);
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  TensorT<T> fan_in_uniform(const std::string& name, Shape shape, int fan_in);
  TensorT<T> normal(const std::string& name, Shape shape, T stddev);

  const std::vector<std::pair<std::string, TensorT<T>>>& items() const {
    return items_;
  }
  TensorT<T> find(const std::string& name) const;
  int64_t total_params() const;
  void zero_grads();

 private:
  TensorT<T> add(const std::string& name, TensorT<T> t);
  std::vector<std::pair<std::string, TensorT<T>>> items_;
  Rng rng_;
};

using ParamRegistry = ParamRegistryT<float>;

template <typename T>
class Conv2dT {
 public:
  Conv2dT() = default;
  Conv2dT(ParamRegistryT<T>& reg, const std::string& prefix, int cin, int cout,
          int k, int stride, int pad, int groups = 1, bool bias = true);
  TensorT<T> forward(const TensorT<T>& x) const;
  TensorT<T> weight, bias_param;
  int stride = 1, pad = 0, groups = 1;
};

// Depthwise k x k followed by pointwise 1x1.
template <typename T>
class SepConv2dT {
 public:
  SepConv2dT() = default;
  SepConv2dT(ParamRegistryT<T>& reg, const std::string& prefix, int cin,
             int cout, int k);
  TensorT<T> forward(const TensorT<T>& x) const;
  Conv2dT<T> depthwise, pointwise;
};

template <typename T>
class GroupNormT {
 public:
  GroupNormT() = default;
  GroupNormT(ParamRegistryT<T>& reg, const std::string& prefix, int channels,
             int groups, T eps = T(1e-6));
  TensorT<T> forward(const TensorT<T>& x) const;
  TensorT<T> gamma, beta;
  int groups = 1;
  T eps = T(1e-6);
};

template <typename T>
class RMSNormT {
 public:
  RMSNormT() = default;
  RMSNormT(ParamRegistryT<T>& reg, const std::string& prefix, int channels,
           T eps = T(1e-6));
  TensorT<T> forward(const TensorT<T>& x) const;  // x (N,C)
  TensorT<T> gamma;
  T eps = T(1e-6);
};

// Dense layer on (N, in) rows.
template <typename T>
class LinearT {
 public:
  LinearT() = default;
  LinearT(ParamRegistryT<T>& reg, const std::string& prefix, int in, int out,
          bool bias = true);
  TensorT<T> forward(const TensorT<T>& x) const;
  TensorT<T> weight, bias_param;  // weight (in, out)
};

using Conv2d = Conv2dT<float>;
using SepConv2d = SepConv2dT<float>;
using GroupNorm = GroupNormT<float>;
using RMSNorm = RMSNormT<float>;
using Linear = LinearT<float>;

}  // namespace twins
