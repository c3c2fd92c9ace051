#include "twins/model/uncertainty.hpp"

namespace twins {

template <typename T>
UncertaintyHeadT<T>::UncertaintyHeadT(ParamRegistryT<T>& reg,
                                      const std::string& prefix,
                                      const UncertaintyConfig& cfg)
    : cfg_(cfg) {
  if (cfg.iters < 2)
    throw ConfigError("uncertainty head needs K >= 2 iterations");
  const int cin = cfg.iters * (cfg.iters - 1);  // K(K-1)/2 pairs, 2ch each
  fc1_ = Conv2dT<T>(reg, prefix + ".fc1", cin, cfg.hidden, 1, 1, 0);
  fc2_ = Conv2dT<T>(reg, prefix + ".fc2", cfg.hidden, cfg.hidden, 1, 1, 0);
  fc3_ = Conv2dT<T>(reg, prefix + ".fc3", cfg.hidden, 1, 1, 1, 0);
}

template <typename T>
TensorT<T> UncertaintyHeadT<T>::estimate(
    const std::vector<TensorT<T>>& fields) const {
  const int k = int(fields.size());
  if (k < 2)
    throw ConfigError("estimate_uncertainty: need at least 2 fields, got " +
                      std::to_string(k));
  if (k != cfg_.iters)
    throw ContractError("estimate_uncertainty: head built for K=" +
                        std::to_string(cfg_.iters) + ", trace has " +
                        std::to_string(k));
  std::vector<TensorT<T>> feats;
  feats.reserve(size_t(k * (k - 1) / 2));
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      feats.push_back(square(sub(fields[size_t(i)], fields[size_t(j)])));
  auto x = concat(feats, 0);
  auto raw = fc3_.forward(relu(fc2_.forward(relu(fc1_.forward(x)))));
  return exp_op(clamp(raw, T(-cfg_.logsig_clamp), T(cfg_.logsig_clamp)));
}

template <typename T>
TensorT<T> l1_residual_map(const TensorT<T>& pred, const TensorT<T>& gt) {
  check_same_shape(pred, gt, "l1_residual_map");
  const int n = pred.dim(1) * pred.dim(2);
  return sum_axis0(reshape(abs_op(sub(pred, gt)), {pred.dim(0), n}));
}

template <typename T>
LossValueT<T> laplace_nll(const TensorT<T>& pred, const TensorT<T>& gt,
                          const TensorT<T>& sigma, const TensorT<T>& valid) {
  check_same_shape(pred, gt, "laplace_nll");
  const int h = pred.dim(1), w = pred.dim(2);
  if (sigma.numel() != int64_t(h) * w || valid.numel() != int64_t(h) * w)
    throw ContractError("laplace_nll: sigma/valid size mismatch");
  T count = T(0);
  for (T v : valid.vec()) count += v;
  if (count == T(0)) return {TensorT<T>::scalar(T(0)), true};
  const int n = h * w;
  auto sig = reshape(sigma, {n});
  auto residual = l1_residual_map(pred, gt);
  auto per_pixel = add(log_op(mul_scalar(sig, T(2))), div(residual, sig));
  auto mask = reshape(valid, {n}).detach();
  auto loss = mul_scalar(sum_all(mul(per_pixel, mask)), T(1) / count);
  return {loss, false};
}

template <typename T>
LossValueT<T> kl_alignment(const TensorT<T>& sigma, const TensorT<T>& residuals,
                           const TensorT<T>& valid, int bins, T log_lo,
                           T log_hi) {
  if (sigma.numel() != residuals.numel() || sigma.numel() != valid.numel())
    throw ContractError("kl_alignment: element count mismatch");
  if (bins < 2) throw ConfigError("kl_alignment: need >= 2 bins");
  T count = T(0);
  for (T v : valid.vec()) count += v;
  if (count == T(0)) return {TensorT<T>::scalar(T(0)), true};
  const int n = int(sigma.numel());
  auto mask_col = reshape(valid, {n, 1}).detach();

  const T spacing = (log_hi - log_lo) / T(bins);
  const T inv2h2 = T(1) / (T(2) * spacing * spacing);

  auto soft_hist = [&](const TensorT<T>& x) {
    auto lx = clamp(log_op(add_scalar(reshape(x, {n}), T(1e-12))), log_lo,
                    log_hi);
    std::vector<TensorT<T>> rows;
    rows.reserve(size_t(bins));
    for (int b = 0; b < bins; ++b) {
      const T center = log_lo + (T(b) + T(0.5)) * spacing;
      rows.push_back(reshape(
          exp_op(mul_scalar(square(add_scalar(lx, -center)), -inv2h2)),
          {1, n}));
    }
    auto weights = concat(rows, 0);           // (B, n)
    auto colsum = sum_axis0(weights);         // per-sample normalizer
    auto wn = div_bcast(weights, colsum, 1);
    auto hist = mul_scalar(reshape(matmul(wn, mask_col), {bins, 1}),
                           T(1) / count);
    // Epsilon smoothing, renormalized.
    auto smoothed = add_scalar(hist, T(1e-6));
    auto total = sum_all(smoothed);
    return reshape(div_bcast(smoothed, total, 1), {bins});
  };

  auto p = soft_hist(residuals);  // target distribution
  auto q = soft_hist(sigma);
  auto kl = sum_all(mul(p, sub(log_op(p), log_op(q))));
  return {kl, false};
}

#define TWINS_INSTANTIATE_UNC(T)                                             \
  template class UncertaintyHeadT<T>;                                        \
  template TensorT<T> l1_residual_map(const TensorT<T>&, const TensorT<T>&); \
  template LossValueT<T> laplace_nll(const TensorT<T>&, const TensorT<T>&,   \
                                     const TensorT<T>&, const TensorT<T>&);  \
  template LossValueT<T> kl_alignment(const TensorT<T>&, const TensorT<T>&,  \
                                      const TensorT<T>&, int, T, T);

TWINS_INSTANTIATE_UNC(float)
TWINS_INSTANTIATE_UNC(double)

}  // namespace twins
