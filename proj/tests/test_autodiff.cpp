#include <doctest.h>

#include "gradcheck.hpp"

using namespace twins;
using testutil::max_rel_grad_err;
using testutil::random_tensor;

namespace {

// Scalarize a tensor-valued op with fixed random weights so one backward
// pass covers every output element.
TensorD project(const TensorD& y, Rng& rng) {
  auto w = TensorD::zeros(y.shape());
  for (auto& v : w.vec()) v = rng.normal();
  return sum_all(mul(y, w));
}

}  // namespace

TEST_CASE("gradients: elementwise ops") {
  Rng rng(7);
  auto run = [&](const char* name, auto op) {
    Rng prng(11);
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng2(11);
          return project(op(in[0]), prng2);
        },
        {random_tensor({3, 4}, rng)});
    INFO(name);
    CHECK(err < 1e-5);
  };
  run("relu+margin", [](const TensorD& x) {
    return relu(add_scalar(x, 3.0));  // keep away from the kink
  });
  run("elu", [](const TensorD& x) { return elu(x); });
  run("gelu", [](const TensorD& x) { return gelu(x); });
  run("tanh", [](const TensorD& x) { return tanh_op(x); });
  run("sigmoid", [](const TensorD& x) { return sigmoid(x); });
  run("exp", [](const TensorD& x) { return exp_op(x); });
  run("log", [](const TensorD& x) { return log_op(add_scalar(square(x), 1.0)); });
  run("square", [](const TensorD& x) { return square(x); });
  run("sqrt", [](const TensorD& x) { return sqrt_op(add_scalar(square(x), 1.0)); });
  run("clamp", [](const TensorD& x) { return clamp(x, -10.0, 10.0); });
  run("abs+margin", [](const TensorD& x) { return abs_op(add_scalar(x, 5.0)); });
  run("softmax", [](const TensorD& x) { return softmax(x, 1); });
}

TEST_CASE("gradients: binary ops and broadcasts") {
  Rng rng(13);
  auto check2 = [&](const char* name, auto op, Shape sa, Shape sb) {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(5);
          return project(op(in[0], in[1]), prng);
        },
        {random_tensor(sa, rng), random_tensor(sb, rng)});
    INFO(name);
    CHECK(err < 1e-5);
  };
  check2("add", [](auto& a, auto& b) { return add(a, b); }, {2, 5}, {2, 5});
  check2("sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 5}, {2, 5});
  check2("mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 5}, {2, 5});
  check2("div", [](auto& a, auto& b) {
    return div(a, add_scalar(square(b), 1.0));
  }, {2, 5}, {2, 5});
  check2("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4},
         {4, 5});
  check2("div_bcast rows", [](auto& a, auto& b) {
    return div_bcast(a, add_scalar(square(b), 1.0), 0);
  }, {3, 4}, {3});
  check2("div_bcast cols", [](auto& a, auto& b) {
    return div_bcast(a, add_scalar(square(b), 1.0), 1);
  }, {3, 4}, {4});
  check2("mul_bcast", [](auto& a, auto& b) { return mul_bcast(a, b, 0); },
         {3, 4}, {3});
  check2("add_bias_rows", [](auto& a, auto& b) { return add_bias_rows(a, b); },
         {3, 4}, {4});
}

TEST_CASE("gradients: conv2d variants") {
  Rng rng(17);
  auto check_conv = [&](const char* name, Shape xs, Shape ws, int stride,
                        int pad, int groups) {
    const int cout = ws[0];
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(3);
          return project(conv2d(in[0], in[1], in[2], stride, pad, groups),
                         prng);
        },
        {random_tensor(xs, rng), random_tensor(ws, rng),
         random_tensor({cout}, rng)});
    INFO(name);
    CHECK(err < 1e-5);
  };
  check_conv("3x3 pad1", {3, 5, 6}, {4, 3, 3, 3}, 1, 1, 1);
  check_conv("1x1", {4, 4, 4}, {5, 4, 1, 1}, 1, 0, 1);
  check_conv("stride2", {3, 6, 6}, {4, 3, 2, 2}, 2, 0, 1);
  check_conv("depthwise", {4, 5, 5}, {4, 1, 3, 3}, 1, 1, 4);
  check_conv("grouped", {4, 5, 5}, {6, 2, 3, 3}, 1, 1, 2);
}

TEST_CASE("gradients: norms, shape ops, image ops") {
  Rng rng(23);
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(3);
          return project(group_norm(in[0], 2, in[1], in[2], 1e-6), prng);
        },
        {random_tensor({4, 3, 3}, rng), random_tensor({4}, rng),
         random_tensor({4}, rng)});
    CHECK(err < 1e-4);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(9);
          return project(rms_norm(in[0], in[1], 1e-6), prng);
        },
        {random_tensor({3, 6}, rng), random_tensor({6}, rng)});
    CHECK(err < 1e-4);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(concat<double>({in[0], in[1]}, 0), prng);
        },
        {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(slice(in[0], 1, 1, 2), prng);
        },
        {random_tensor({3, 5}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(avg_pool_last(in[0], 2), prng);
        },
        {random_tensor({3, 4, 6}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(bilinear_resize(in[0], 5, 7), prng);
        },
        {random_tensor({2, 3, 4}, rng)});
    CHECK(err < 1e-5);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          auto w = softmax(in[1], 0);
          return project(upsample_weighted(in[0], w, 4, 4.0), prng);
        },
        {random_tensor({2, 3, 3}, rng), random_tensor({9, 16, 3, 3}, rng)});
    CHECK(err < 1e-5);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(sum_axis0(in[0]), prng);
        },
        {random_tensor({4, 3}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = max_rel_grad_err(
        [&](std::vector<TensorD>& in) {
          Rng prng(4);
          return project(transpose2d(in[0]), prng);
        },
        {random_tensor({3, 5}, rng)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("autodiff: accumulation over reused tensors and detach") {
  auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
  auto y = add(mul(x, x), x);  // y = x^2 + x, dy/dx = 2x + 1
  sum_all(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));

  auto z = TensorD::from_data({2}, {1.0, 2.0}, true);
  auto d = z.detach();
  CHECK_FALSE(d.requires_grad());
  auto w = mul(d, z);
  sum_all(w).backward();
  CHECK(z.grad()[0] == doctest::Approx(1.0));  // only the live branch

  // no_grad builds no graph
  {
    NoGradGuard off;
    auto q = mul(z, z);
    CHECK_FALSE(q.requires_grad());
  }
}
