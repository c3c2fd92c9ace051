#pragma once

#include <functional>
#include <vector>

#include "twins/core/ops.hpp"
#include "twins/core/rng.hpp"

namespace twins::testutil {

using ScalarFn = std::function<TensorD(std::vector<TensorD>&)>;

// Central-difference gradient check at float64. Returns the maximum absolute
// gradient discrepancy normalized by the largest gradient magnitude seen
// (analytic or numeric), so the reported value is a relative error.
inline double max_rel_grad_err(const ScalarFn& f, std::vector<TensorD> inputs,
                               double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto loss = f(inputs);
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad()
                                    : std::vector<double>(size_t(t.numel()), 0.0));

  double gmax = 0.0, dmax = 0.0;
  NoGradGuard off;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double x0 = t.data()[i];
      t.data()[i] = x0 + h;
      const double fp = f(inputs).item();
      t.data()[i] = x0 - h;
      const double fm = f(inputs).item();
      t.data()[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][size_t(i)];
      gmax = std::max({gmax, std::fabs(a), std::fabs(numeric)});
      dmax = std::max(dmax, std::fabs(a - numeric));
    }
  }
  return dmax / std::max(gmax, 1e-6);
}

inline TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = TensorD::zeros(std::move(shape));
  for (auto& v : t.vec()) v = rng.normal() * scale;
  return t;
}

inline Tensor random_tensor_f(Shape shape, Rng& rng, float scale = 1.0f) {
  auto t = Tensor::zeros(std::move(shape));
  for (auto& v : t.vec()) v = float(rng.normal()) * scale;
  return t;
}

}  // namespace twins::testutil
