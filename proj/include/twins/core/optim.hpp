#pragma once

#include "twins/core/nn.hpp"

namespace twins {

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-5f;
  float clip_norm = 1.0f;  // 0 disables clipping
};

// Decoupled weight decay Adam over a parameter registry.
class AdamW {
 public:
  AdamW(const ParamRegistry& params, AdamWConfig cfg);

  // Applies one update from accumulated grads, then clears them.
  // Returns the pre-clip global grad norm.
  float step();
  void zero_grad();

  int64_t step_count() const { return step_count_; }
  AdamWConfig& config() { return cfg_; }

  // Serialization hooks (moment vectors + step counter).
  const std::vector<std::vector<float>>& moment1() const { return m_; }
  const std::vector<std::vector<float>>& moment2() const { return v_; }
  std::vector<std::vector<float>>& moment1() { return m_; }
  std::vector<std::vector<float>>& moment2() { return v_; }
  void set_step_count(int64_t n) { step_count_ = n; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamWConfig cfg_;
  int64_t step_count_ = 0;
};

}  // namespace twins
