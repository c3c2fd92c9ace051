#include "twins/core/nn.hpp"

#include <cmath>

namespace twins {

template <typename T>
TensorT<T> ParamRegistryT<T>::add(const std::string& name, TensorT<T> t) {
  for (const auto& [n, unused] : items_)
    if (n == name) throw ContractError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

template <typename T>
TensorT<T> ParamRegistryT<T>::zeros(const std::string& name, Shape shape) {
  return add(name, TensorT<T>::zeros(std::move(shape)));
}

template <typename T>
TensorT<T> ParamRegistryT<T>::constant(const std::string& name, Shape shape,
                                       T v) {
  return add(name, TensorT<T>::full(std::move(shape), v));
}

template <typename T>
TensorT<T> ParamRegistryT<T>::fan_in_uniform(const std::string& name,
                                             Shape shape, int fan_in) {
  auto t = TensorT<T>::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : t.vec()) v = T(rng_.uniform(-bound, bound));
  return add(name, t);
}

template <typename T>
TensorT<T> ParamRegistryT<T>::normal(const std::string& name, Shape shape,
                                     T stddev) {
  auto t = TensorT<T>::zeros(std::move(shape));
  for (auto& v : t.vec()) v = T(rng_.normal() * double(stddev));
  return add(name, t);
}

template <typename T>
TensorT<T> ParamRegistryT<T>::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ContractError("parameter not found: " + name);
}

template <typename T>
int64_t ParamRegistryT<T>::total_params() const {
  int64_t n = 0;
  for (const auto& [unused, t] : items_) n += t.numel();
  return n;
}

template <typename T>
void ParamRegistryT<T>::zero_grads() {
  for (auto& [unused, t] : items_) t.zero_grad();
}

template <typename T>
Conv2dT<T>::Conv2dT(ParamRegistryT<T>& reg, const std::string& prefix, int cin,
                    int cout, int k, int stride_, int pad_, int groups_,
                    bool bias)
    : stride(stride_), pad(pad_), groups(groups_) {
  const int fan_in = (cin / groups_) * k * k;
  weight = reg.fan_in_uniform(prefix + ".w", {cout, cin / groups_, k, k},
                              fan_in);
  if (bias) bias_param = reg.zeros(prefix + ".b", {cout});
}

template <typename T>
TensorT<T> Conv2dT<T>::forward(const TensorT<T>& x) const {
  return conv2d(x, weight, bias_param, stride, pad, groups);
}

template <typename T>
SepConv2dT<T>::SepConv2dT(ParamRegistryT<T>& reg, const std::string& prefix,
                          int cin, int cout, int k)
    : depthwise(reg, prefix + ".dw", cin, cin, k, 1, k / 2, cin, false),
      pointwise(reg, prefix + ".pw", cin, cout, 1, 1, 0, 1, true) {}

template <typename T>
TensorT<T> SepConv2dT<T>::forward(const TensorT<T>& x) const {
  return pointwise.forward(depthwise.forward(x));
}

template <typename T>
GroupNormT<T>::GroupNormT(ParamRegistryT<T>& reg, const std::string& prefix,
                          int channels, int groups_, T eps_)
    : groups(groups_), eps(eps_) {
  if (channels % groups_ != 0)
    throw ConfigError("group norm: groups " + std::to_string(groups_) +
                      " do not divide channels " + std::to_string(channels));
  gamma = reg.constant(prefix + ".g", {channels}, T(1));
  beta = reg.zeros(prefix + ".beta", {channels});
}

template <typename T>
TensorT<T> GroupNormT<T>::forward(const TensorT<T>& x) const {
  return group_norm(x, groups, gamma, beta, eps);
}

template <typename T>
RMSNormT<T>::RMSNormT(ParamRegistryT<T>& reg, const std::string& prefix,
                      int channels, T eps_)
    : eps(eps_) {
  gamma = reg.constant(prefix + ".g", {channels}, T(1));
}

template <typename T>
TensorT<T> RMSNormT<T>::forward(const TensorT<T>& x) const {
  return rms_norm(x, gamma, eps);
}

template <typename T>
LinearT<T>::LinearT(ParamRegistryT<T>& reg, const std::string& prefix, int in,
                    int out, bool bias) {
  weight = reg.fan_in_uniform(prefix + ".w", {in, out}, in);
  if (bias) bias_param = reg.zeros(prefix + ".b", {out});
}

template <typename T>
TensorT<T> LinearT<T>::forward(const TensorT<T>& x) const {
  auto y = matmul(x, weight);
  if (bias_param.defined()) y = add_bias_rows(y, bias_param);
  return y;
}

#define TWINS_INSTANTIATE_NN(T)    \
  template class ParamRegistryT<T>; \
  template class Conv2dT<T>;        \
  template class SepConv2dT<T>;     \
  template class GroupNormT<T>;     \
  template class RMSNormT<T>;       \
  template class LinearT<T>;

TWINS_INSTANTIATE_NN(float)
TWINS_INSTANTIATE_NN(double)

}  // namespace twins
