#include "twins/model/cta.hpp"

namespace twins {

CtaMode parse_cta_mode(const std::string& s) {
  if (s == "attention") return CtaMode::kAttention;
  if (s == "add") return CtaMode::kAdd;
  if (s == "identity") return CtaMode::kIdentity;
  throw ConfigError("cta.mode must be attention|add|identity, got " + s);
}

template <typename T>
TensorT<T> map_to_tokens(const TensorT<T>& x) {
  if (x.rank() != 3) throw ContractError("map_to_tokens expects (C,H,W)");
  const int c = x.dim(0), n = x.dim(1) * x.dim(2);
  return transpose2d(reshape(x, {c, n}));
}

template <typename T>
TensorT<T> tokens_to_map(const TensorT<T>& t, int h, int w) {
  if (t.rank() != 2 || t.dim(0) != h * w)
    throw ContractError("tokens_to_map: token count mismatch");
  return reshape(transpose2d(t), {t.dim(1), h, w});
}

template <typename T>
TensorT<T> linear_attention_core(const TensorT<T>& q, const TensorT<T>& k,
                                 const TensorT<T>& v, T eps) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ContractError("linear_attention_core expects token matrices");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
    throw ContractError("linear_attention_core: shape mismatch");
  auto phi_q = add_scalar(elu(q), T(1));
  auto phi_k = add_scalar(elu(k), T(1));
  auto kv = matmul(transpose2d(phi_k), v);        // (C, Cv)
  auto numer = matmul(phi_q, kv);                 // (N, Cv)
  auto ksum = sum_axis0(phi_k);                   // (C)
  auto denom =
      add_scalar(reshape(matmul(phi_q, reshape(ksum, {k.dim(1), 1})),
                         {q.dim(0)}),
                 eps);                            // (N), strictly positive
  return div_bcast(numer, denom, 0);
}

template <typename T>
LinearAttentionT<T>::LinearAttentionT(ParamRegistryT<T>& reg,
                                      const std::string& prefix, int channels,
                                      const CtaConfig& cfg)
    : cfg_(cfg), channels_(channels) {
  if (cfg.heads < 1 || channels % cfg.heads != 0)
    throw ConfigError("attention heads must divide channels");
  proj_q_ = LinearT<T>(reg, prefix + ".q", channels, channels);
  proj_k_ = LinearT<T>(reg, prefix + ".k", channels, channels);
  proj_v_ = LinearT<T>(reg, prefix + ".v", channels, channels);
  norm_ = RMSNormT<T>(reg, prefix + ".norm", channels);
  mlp_in_ = LinearT<T>(reg, prefix + ".mlp0", channels, 2 * channels);
  mlp_out_ = LinearT<T>(reg, prefix + ".mlp1", 2 * channels, channels);
}

template <typename T>
TensorT<T> LinearAttentionT<T>::attend_tokens(const TensorT<T>& q_tokens,
                                              const TensorT<T>& kv_tokens) const {
  auto q = proj_q_.forward(q_tokens);
  auto k = proj_k_.forward(kv_tokens);
  auto v = proj_v_.forward(kv_tokens);
  const int hs = channels_ / cfg_.heads;
  if (cfg_.heads == 1) return linear_attention_core(q, k, v, T(cfg_.eps));
  std::vector<TensorT<T>> heads;
  heads.reserve(size_t(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h)
    heads.push_back(linear_attention_core(slice(q, 1, h * hs, hs),
                                          slice(k, 1, h * hs, hs),
                                          slice(v, 1, h * hs, hs), T(cfg_.eps)));
  return concat(heads, 1);
}

template <typename T>
TensorT<T> LinearAttentionT<T>::forward(const TensorT<T>& query_src,
                                        const TensorT<T>& kv_src) const {
  const int h = query_src.dim(1), w = query_src.dim(2);
  auto q_tokens = map_to_tokens(query_src);
  auto kv_tokens = map_to_tokens(kv_src);
  auto attn = attend_tokens(q_tokens, kv_tokens);
  auto y = mlp_out_.forward(gelu(mlp_in_.forward(norm_.forward(attn))));
  if (cfg_.residual) y = add(y, q_tokens);
  return tokens_to_map(y, h, w);
}

template <typename T>
CrossTaskAdapterT<T>::CrossTaskAdapterT(ParamRegistryT<T>& reg,
                                        const std::string& prefix,
                                        const std::array<int, 4>& stage_channels,
                                        int hidden_width, const CtaConfig& cfg)
    : cfg_(cfg) {
  for (int i = 0; i < 3; ++i) {
    const std::string lp = prefix + ".l" + std::to_string(i + 1);
    hidden_proj_[size_t(i)] = Conv2dT<T>(reg, lp + ".hproj", hidden_width,
                                         stage_channels[size_t(i)], 1, 1, 0);
    project_stage_[size_t(i)] =
        LinearAttentionT<T>(reg, lp + ".proj", stage_channels[size_t(i)], cfg);
    fuse_stage_[size_t(i)] =
        LinearAttentionT<T>(reg, lp + ".fuse", stage_channels[size_t(i)], cfg);
    add_proj_[size_t(i)] = Conv2dT<T>(reg, lp + ".addproj", hidden_width,
                                      stage_channels[size_t(i)], 1, 1, 0);
  }
}

template <typename T>
AlignedHiddenStatesT<T> CrossTaskAdapterT<T>::align_hidden(
    const HiddenStateSetT<T>& hidden,
    const std::array<std::pair<int, int>, 3>& stage_sizes) const {
  AlignedHiddenStatesT<T> out;
  for (int i = 0; i < 3; ++i) {
    auto resized = bilinear_resize(hidden.levels[size_t(i)],
                                   stage_sizes[size_t(i)].first,
                                   stage_sizes[size_t(i)].second);
    out.levels[size_t(i)] = hidden_proj_[size_t(i)].forward(resized);
  }
  return out;
}

template <typename T>
FusedFeaturesT<T> CrossTaskAdapterT<T>::fuse(
    const FeaturePyramidT<T>& contextual,
    const AlignedHiddenStatesT<T>& hidden) const {
  FusedFeaturesT<T> out;
  out.levels[3] = contextual.stages[3];  // no hidden-state counterpart
  for (int i = 0; i < 3; ++i) {
    const auto& f = contextual.stages[size_t(i)];
    const auto& h = hidden.levels[size_t(i)];
    switch (cfg_.mode) {
      case CtaMode::kIdentity:
        out.levels[size_t(i)] = f;
        break;
      case CtaMode::kAdd:
        out.levels[size_t(i)] = add(f, add_proj_[size_t(i)].forward(h));
        break;
      case CtaMode::kAttention: {
        if (h.shape() != f.shape())
          throw ContractError("fuse: level " + std::to_string(i + 1) +
                              " shape mismatch");
        auto g = project_stage_[size_t(i)].forward(f, h);
        out.levels[size_t(i)] = fuse_stage_[size_t(i)].forward(g, f);
        break;
      }
    }
  }
  return out;
}

#define TWINS_INSTANTIATE_CTA(T)                                              \
  template TensorT<T> map_to_tokens(const TensorT<T>&);                       \
  template TensorT<T> tokens_to_map(const TensorT<T>&, int, int);             \
  template TensorT<T> linear_attention_core(const TensorT<T>&,                \
                                            const TensorT<T>&,               \
                                            const TensorT<T>&, T);           \
  template class LinearAttentionT<T>;                                         \
  template class CrossTaskAdapterT<T>;

TWINS_INSTANTIATE_CTA(float)
TWINS_INSTANTIATE_CTA(double)

}  // namespace twins
