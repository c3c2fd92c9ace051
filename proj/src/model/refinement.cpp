#include "twins/model/refinement.hpp"

#include <cmath>

namespace twins {
namespace {

template <typename T>
void check_finite_input(const TensorT<T>& t, const char* what, int iteration) {
  for (T v : t.vec())
    if (!std::isfinite(double(v)))
      throw NumericalError(std::string("non-finite ") + what +
                           " at iteration " + std::to_string(iteration));
}

template <typename T>
TensorT<T> zero_second_component(const TensorT<T>& field) {
  auto u = slice(field, 0, 0, 1);
  auto zeros = TensorT<T>::zeros({1, field.dim(1), field.dim(2)});
  return concat<T>({u, zeros}, 0);
}

}  // namespace

template <typename T>
RefinementT<T>::RefinementT(ParamRegistryT<T>& reg, const std::string& prefix,
                            const RefineConfig& cfg, CorrMode mode)
    : cfg_(cfg), mode_(mode) {
  const int d = cfg.hidden_width;
  const int corr_ch =
      corr_feature_channels(mode, cfg.corr_levels, cfg.lookup_radius);
  motion_in_ = Conv2dT<T>(reg, prefix + ".menc.in", corr_ch + 2, d, 1, 1, 0);
  motion_mix_ = SepConv2dT<T>(reg, prefix + ".menc.mix", d, d, 3);
  // Gate input channel counts: [h, late, neighbors(, motion)].
  const std::array<int, 3> xin = {d + d + d,  // late + up(h2) + motion
                                  d + d + d,  // late + up(h3) + down(h1)
                                  d + d};     // late + down(h2)
  for (int j = 0; j < 3; ++j) {
    const std::string cp = prefix + ".gru" + std::to_string(j);
    cells_[size_t(j)].wz = SepConv2dT<T>(reg, cp + ".z", d + xin[size_t(j)], d, 3);
    cells_[size_t(j)].wr = SepConv2dT<T>(reg, cp + ".r", d + xin[size_t(j)], d, 3);
    cells_[size_t(j)].wq = SepConv2dT<T>(reg, cp + ".q", d + xin[size_t(j)], d, 3);
  }
  delta_mix_ = SepConv2dT<T>(reg, prefix + ".delta.mix", d, d, 3);
  delta_out_ = Conv2dT<T>(reg, prefix + ".delta.out", d, 2, 1, 1, 0);
  // Zero-init the regression and mask heads: iteration zero starts from the
  // unchanged field and a uniform convex combination.
  for (auto& v : delta_out_.weight.vec()) v = T(0);
  mask_head_ = Conv2dT<T>(reg, prefix + ".mask", d, 9 * 16, 1, 1, 0);
  for (auto& v : mask_head_.weight.vec()) v = T(0);
}

template <typename T>
HiddenStateSetT<T> RefinementT<T>::init_hidden(
    const std::array<TensorT<T>, 3>& aligned_early) const {
  HiddenStateSetT<T> h;
  for (int j = 0; j < 3; ++j) {
    const auto& a = aligned_early[size_t(j)];
    if (a.dim(0) != cfg_.hidden_width)
      throw ContractError("init_hidden: aligned channels " +
                          std::to_string(a.dim(0)) + " != hidden width " +
                          std::to_string(cfg_.hidden_width));
    if (j > 0 && (aligned_early[size_t(j - 1)].dim(1) != 2 * a.dim(1) ||
                  aligned_early[size_t(j - 1)].dim(2) != 2 * a.dim(2)))
      throw ContractError("init_hidden: level resolutions must halve");
    h.levels[size_t(j)] = tanh_op(a);
  }
  h.iteration = 0;
  return h;
}

template <typename T>
TensorT<T> RefinementT<T>::cell_update(const GruCell& cell, const TensorT<T>& h,
                                       const TensorT<T>& x) const {
  auto hx = concat<T>({h, x}, 0);
  auto z = sigmoid(cell.wz.forward(hx));
  auto r = sigmoid(cell.wr.forward(hx));
  auto rh = mul(r, h);
  auto q = tanh_op(cell.wq.forward(concat<T>({rh, x}, 0)));
  // h' = (1 - z) * h + z * q
  auto one_minus_z = add_scalar(neg(z), T(1));
  return add(mul(one_minus_z, h), mul(z, q));
}

template <typename T>
TensorT<T> RefinementT<T>::motion_features(const TensorT<T>& corr_feat,
                                           const TensorT<T>& current) const {
  auto m = relu(motion_in_.forward(concat<T>({corr_feat, current}, 0)));
  return relu(motion_mix_.forward(m));
}

template <typename T>
TensorT<T> RefinementT<T>::regress_delta(const TensorT<T>& h_finest) const {
  auto d = delta_out_.forward(relu(delta_mix_.forward(h_finest)));
  return mode_ == CorrMode::kStereo ? zero_second_component(d) : d;
}

template <typename T>
std::pair<HiddenStateSetT<T>, TensorT<T>> RefinementT<T>::gru_step(
    const HiddenStateSetT<T>& h, const std::array<TensorT<T>, 3>& aligned_late,
    const TensorT<T>& corr_feat, const TensorT<T>& current) const {
  for (int j = 0; j < 3; ++j) {
    check_finite_input(h.levels[size_t(j)], "hidden state", h.iteration);
    check_finite_input(aligned_late[size_t(j)], "context feature", h.iteration);
  }
  check_finite_input(corr_feat, "correlation feature", h.iteration);
  check_finite_input(current, "correspondence field", h.iteration);

  const auto& h1 = h.levels[0];
  const auto& h2 = h.levels[1];
  const auto& h3 = h.levels[2];
  HiddenStateSetT<T> out;
  out.iteration = h.iteration + 1;
  // Coarse to fine; finer levels see already-updated coarser states.
  auto x3 = concat<T>({aligned_late[2], avg_pool_last(h2, 2)}, 0);
  out.levels[2] = cell_update(cells_[2], h3, x3);
  auto x2 = concat<T>({aligned_late[1],
                       bilinear_resize(out.levels[2], h2.dim(1), h2.dim(2)),
                       avg_pool_last(h1, 2)},
                      0);
  out.levels[1] = cell_update(cells_[1], h2, x2);
  auto motion = motion_features(corr_feat, current);
  auto x1 = concat<T>({aligned_late[0],
                       bilinear_resize(out.levels[1], h1.dim(1), h1.dim(2)),
                       motion},
                      0);
  out.levels[0] = cell_update(cells_[0], h1, x1);
  return {out, regress_delta(out.levels[0])};
}

template <typename T>
TensorT<T> RefinementT<T>::upsample_weights(const TensorT<T>& h_finest) const {
  auto logits = mask_head_.forward(h_finest);
  return softmax(reshape(logits, {9, 16, h_finest.dim(1), h_finest.dim(2)}), 0);
}

template <typename T>
IterationTraceT<T> RefinementT<T>::refine(
    const CorrelationPyramidT<T>& pyr,
    const std::array<TensorT<T>, 3>& aligned_early,
    const std::array<TensorT<T>, 3>& aligned_late, int iters,
    TensorT<T> init_field) const {
  if (iters < 1)
    throw ConfigError("refine: iteration count must be >= 1, got " +
                      std::to_string(iters));
  auto h = init_hidden(aligned_early);
  const int hc = pyr.base_h, wc = pyr.base_w;
  TensorT<T> field =
      init_field.defined() ? init_field : TensorT<T>::zeros({2, hc, wc});
  IterationTraceT<T> trace;
  trace.fields.reserve(size_t(iters));
  for (int k = 0; k < iters; ++k) {
    // Detach the running estimate: gradient reaches earlier iterations
    // through the hidden-state chain, not through the field.
    field = field.detach();
    auto corr_feat = corr_lookup(pyr, field, cfg_.lookup_radius);
    auto [h_next, delta] = gru_step(h, aligned_late, corr_feat, field);
    h = h_next;
    field = add(field, delta);
    check_finite_input(field, "updated field", k + 1);
    auto weights = upsample_weights(h.levels[0]);
    trace.fields.push_back(upsample_weighted(field, weights, 4, T(4)));
  }
  trace.final_hidden = h;
  return trace;
}

template class RefinementT<float>;
template class RefinementT<double>;

}  // namespace twins
