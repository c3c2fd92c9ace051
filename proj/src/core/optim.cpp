#include "twins/core/optim.hpp"

#include <cmath>

namespace twins {

AdamW::AdamW(const ParamRegistry& params, AdamWConfig cfg)
    : params_(params.items()), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(size_t(t.numel()), 0.0f);
    v_.emplace_back(size_t(t.numel()), 0.0f);
  }
}

float AdamW::step() {
  // Global norm over present grads; params without grads count as zero.
  double sq = 0.0;
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += double(g) * double(g);
  }
  const float norm = float(std::sqrt(sq));
  float scale = 1.0f;
  if (cfg_.clip_norm > 0.0f && norm > cfg_.clip_norm)
    scale = cfg_.clip_norm / (norm + 1e-12f);

  ++step_count_;
  const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(step_count_));
  const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& t = params_[pi].second;
    float* w = t.data();
    const int64_t n = t.numel();
    auto& m = m_[pi];
    auto& v = v_[pi];
    const bool has_grad = t.has_grad();
    const float* g = has_grad ? t.grad().data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      const float gi = has_grad ? g[i] * scale : 0.0f;
      m[size_t(i)] = cfg_.beta1 * m[size_t(i)] + (1.0f - cfg_.beta1) * gi;
      v[size_t(i)] = cfg_.beta2 * v[size_t(i)] + (1.0f - cfg_.beta2) * gi * gi;
      const float mhat = float(double(m[size_t(i)]) / bc1);
      const float vhat = float(double(v[size_t(i)]) / bc2);
      w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  zero_grad();
  return norm;
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace twins
