#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "twins/model/backbone.hpp"

using namespace twins;
using testutil::random_tensor_f;

namespace {

BackboneConfig tiny_cfg() {
  BackboneConfig cfg;
  cfg.channels = {8, 16, 24, 32};
  cfg.gn_groups = 4;
  return cfg;
}

}  // namespace

TEST_CASE("backbone: stage shapes follow the stride schedule") {
  ParamRegistry reg(1);
  Backbone enc(reg, "enc", tiny_cfg());
  auto img = Tensor::zeros({3, 64, 64});
  auto [pyr, taps] = enc.encode(img);
  const int want_hw[4][2] = {{16, 16}, {8, 8}, {4, 4}, {2, 2}};
  for (int s = 0; s < 4; ++s) {
    CHECK(pyr.stages[s].dim(1) == want_hw[s][0]);
    CHECK(pyr.stages[s].dim(2) == want_hw[s][1]);
    CHECK(pyr.stages[s].dim(0) == tiny_cfg().channels[s]);
  }
  for (int s = 0; s < 3; ++s) {
    CHECK(taps.early[s].shape() == pyr.stages[s].shape());
    CHECK(taps.late[s].shape() == pyr.stages[s].shape());
  }
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({3, 60, 64})), ConfigError);
}

TEST_CASE("backbone: zero image with zero biases gives all-zero features") {
  ParamRegistry reg(2);
  Backbone enc(reg, "enc", tiny_cfg());
  auto [pyr, taps] = enc.encode(Tensor::zeros({3, 64, 64}));
  for (int s = 0; s < 4; ++s)
    for (float v : pyr.stages[s].vec()) CHECK(v == 0.0f);
  for (int s = 0; s < 3; ++s)
    for (float v : taps.early[s].vec()) CHECK(v == 0.0f);
}

TEST_CASE("backbone: single-pixel perturbation stays inside the receptive field") {
  // Norm-free instance: group statistics would couple all positions.
  BackboneConfig cfg = tiny_cfg();
  cfg.use_norm = false;
  ParamRegistry reg(3);
  Backbone enc(reg, "enc", cfg);
  Rng rng(5);
  auto img = random_tensor_f({3, 64, 64}, rng, 0.5f);
  auto img2 = Tensor::from_data(img.shape(), img.vec());
  const int py = 33, px = 31;
  img2.data()[size_t(1) * 64 * 64 + py * 64 + px] += 1.0f;

  NoGradGuard off;
  auto [pyr_a, ta] = enc.encode(img);
  auto [pyr_b, tb] = enc.encode(img2);

  // Receptive-field recurrence from the layer structure: stem k4/s4, per
  // stage a k2/s2 downsample (stages 2..4) and four k3/s1 convs.
  int rf = 4, jump = 4;
  rf += 4 * 2 * jump;  // stage 1 blocks
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      rf += 1 * jump;
      jump *= 2;
      rf += 4 * 2 * jump;
    }
    const int stride = jump;
    const auto& a = pyr_a.stages[s];
    const auto& b = pyr_b.stages[s];
    const double half = double(rf) / 2.0;
    for (int c = 0; c < a.dim(0); ++c)
      for (int y = 0; y < a.dim(1); ++y)
        for (int x = 0; x < a.dim(2); ++x) {
          const float da = a.data()[(size_t(c) * a.dim(1) + y) * a.dim(2) + x];
          const float db = b.data()[(size_t(c) * a.dim(1) + y) * a.dim(2) + x];
          if (da == db) continue;
          // Center of this output cell in input coordinates.
          const double cy = (y + 0.5) * stride - 0.5;
          const double cx = (x + 0.5) * stride - 0.5;
          CHECK(std::fabs(cy - py) <= half + stride);
          CHECK(std::fabs(cx - px) <= half + stride);
        }
  }
}

TEST_CASE("backbone: shared weights act as a Siamese encoder") {
  ParamRegistry reg(4);
  Backbone enc(reg, "enc", tiny_cfg());
  Rng rng(6);
  auto img = random_tensor_f({3, 32, 32}, rng);
  auto [p1, t1] = enc.encode(img);
  auto [p2, t2] = enc.encode(img);
  for (int s = 0; s < 4; ++s)
    CHECK(p1.stages[s].vec() == p2.stages[s].vec());
  // One parameter set serves both views; encoding twice registered nothing.
  const auto n = reg.items().size();
  enc.encode(img);
  CHECK(reg.items().size() == n);
}

TEST_CASE("align: rectified output, normalized pre-activation, group check") {
  ParamRegistry reg(5);
  AlignBlock align(reg, "al", 8, 16, 4);
  Rng rng(7);
  auto x = random_tensor_f({8, 6, 6}, rng);
  auto pre = align.pre_activation(x);
  auto y = align.forward(x);
  for (float v : y.vec()) CHECK(v >= 0.0f);

  // Fresh module: gamma 1, beta 0, so pre_activation is the normalized map.
  const int cg = 16 / 4;
  const int64_t m = int64_t(cg) * 36;
  for (int g = 0; g < 4; ++g) {
    double mean = 0.0, var = 0.0;
    const float* d = pre.data() + int64_t(g) * m;
    for (int64_t i = 0; i < m; ++i) mean += d[i];
    mean /= double(m);
    for (int64_t i = 0; i < m; ++i) var += (d[i] - mean) * (d[i] - mean);
    var /= double(m);
    CHECK(std::fabs(mean) < 1e-4);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }

  CHECK_THROWS_AS(AlignBlock(reg, "bad", 8, 18, 4), ConfigError);
  CHECK_THROWS_AS(AlignBlock(reg, "bad2", 8, 0, 4), ConfigError);
}

TEST_CASE("align: group norm cancels positive input scaling") {
  // Zero the projection bias so conv(kx) = k conv(x) exactly.
  ParamRegistry reg(8);
  AlignBlock align(reg, "al", 6, 8, 4);
  reg.find("al.proj.b");  // exists
  Rng rng(9);
  auto x = random_tensor_f({6, 5, 5}, rng, 2.0f);
  auto xs = Tensor::from_data(x.shape(), x.vec());
  for (auto& v : xs.vec()) v *= 3.5f;
  auto a = align.pre_activation(x);
  auto b = align.pre_activation(xs);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-5));
}

TEST_CASE("align: gradient matches finite differences (float64)") {
  ParamRegistryT<double> reg(11);
  AlignBlockT<double> align(reg, "al", 4, 8, 4);
  Rng rng(13);
  std::vector<TensorD> inputs;
  inputs.push_back(testutil::random_tensor({4, 4, 4}, rng));
  for (auto& [name, t] : reg.items()) inputs.push_back(t);
  auto err = testutil::max_rel_grad_err(
      [&](std::vector<TensorD>& in) {
        Rng prng(3);
        auto y = align.forward(in[0]);
        auto w = TensorD::zeros(y.shape());
        for (auto& v : w.vec()) v = prng.normal();
        return sum_all(mul(y, w));
      },
      inputs);
  CHECK(err < 1e-3);
}
