#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "twins/model/correlation.hpp"

using namespace twins;
using testutil::random_tensor_f;

TEST_CASE("build_volume: all-ones features give C everywhere") {
  auto ft = Tensor::full({8, 4, 4}, 1.0f);
  auto fs = Tensor::full({8, 4, 4}, 1.0f);
  for (float v : build_volume(ft, fs, CorrMode::kStereo).vec())
    CHECK(v == 8.0f);
  for (float v : build_volume(ft, fs, CorrMode::kFlow).vec())
    CHECK(v == 8.0f);
}

TEST_CASE("build_volume: one-hot features on disjoint channels are orthogonal") {
  auto ft = Tensor::zeros({4, 2, 2});
  auto fs = Tensor::zeros({4, 2, 2});
  for (int i = 0; i < 4; ++i) ft.data()[0 * 4 + i] = 1.0f;  // channel 0
  for (int i = 0; i < 4; ++i) fs.data()[1 * 4 + i] = 1.0f;  // channel 1
  for (float v : build_volume(ft, fs, CorrMode::kFlow).vec()) CHECK(v == 0.0f);
}

TEST_CASE("build_volume: matches the naive triple-loop oracle") {
  Rng rng(3);
  auto ft = random_tensor_f({3, 4, 4}, rng);
  auto fs = random_tensor_f({3, 4, 4}, rng);

  auto vol = build_volume(ft, fs, CorrMode::kFlow);
  for (int pt = 0; pt < 16; ++pt)
    for (int qs = 0; qs < 16; ++qs) {
      double want = 0.0;
      for (int c = 0; c < 3; ++c)
        want += double(ft.data()[c * 16 + pt]) * double(fs.data()[c * 16 + qs]);
      CHECK(vol.data()[pt * 16 + qs] == doctest::Approx(want).epsilon(1e-5));
    }

  auto svol = build_volume(ft, fs, CorrMode::kStereo);
  for (int y = 0; y < 4; ++y)
    for (int wt = 0; wt < 4; ++wt)
      for (int ws = 0; ws < 4; ++ws) {
        double want = 0.0;
        for (int c = 0; c < 3; ++c)
          want += double(ft.data()[c * 16 + y * 4 + wt]) *
                  double(fs.data()[c * 16 + y * 4 + ws]);
        CHECK(svol.data()[(y * 4 + wt) * 4 + ws] ==
              doctest::Approx(want).epsilon(1e-5));
      }

  CHECK_THROWS_AS(build_volume(ft, random_tensor_f({3, 4, 8}, rng),
                               CorrMode::kStereo),
                  ContractError);
}

TEST_CASE("build_volume: symmetry V(A,B)[p,q] == V(B,A)[q,p]") {
  Rng rng(5);
  auto a = random_tensor_f({6, 4, 4}, rng);
  auto b = random_tensor_f({6, 4, 4}, rng);
  auto vab = build_volume(a, b, CorrMode::kFlow);
  auto vba = build_volume(b, a, CorrMode::kFlow);
  for (int p = 0; p < 16; ++p)
    for (int q = 0; q < 16; ++q)
      CHECK(vab.data()[p * 16 + q] ==
            doctest::Approx(vba.data()[q * 16 + p]).epsilon(1e-6));
}

TEST_CASE("build_pyramid: constant volume, pooling oracle, mean conservation") {
  auto cvol = Tensor::full({4, 4, 8}, 2.5f);
  auto pyr = build_pyramid(cvol, CorrMode::kStereo);
  REQUIRE(pyr.levels.size() == 3);
  for (const auto& level : pyr.levels)
    for (float v : level.vec()) CHECK(v == 2.5f);
  CHECK(pyr.levels[1].dim(2) == 4);
  CHECK(pyr.levels[2].dim(2) == 2);

  Rng rng(7);
  auto vol = random_tensor_f({4, 4, 16}, rng);
  auto p = build_pyramid(vol, CorrMode::kStereo);
  // Level 2 equals independent pooling of level 1.
  const auto& l1 = p.levels[1];
  const auto& l2 = p.levels[2];
  for (int o = 0; o < 16; ++o)
    for (int j = 0; j < 4; ++j)
      CHECK(l2.data()[o * 4 + j] ==
            (l1.data()[o * 8 + 2 * j] + l1.data()[o * 8 + 2 * j + 1]) * 0.5f);
  // Mean conservation.
  auto mean_of = [](const Tensor& t) {
    double s = 0.0;
    for (float v : t.vec()) s += v;
    return s / double(t.numel());
  };
  const double m0 = mean_of(p.levels[0]);
  CHECK(mean_of(p.levels[1]) == doctest::Approx(m0).epsilon(1e-6));
  CHECK(mean_of(p.levels[2]) == doctest::Approx(m0).epsilon(1e-6));

  auto fvol = random_tensor_f({2, 2, 4, 8}, rng);
  auto fp = build_pyramid(fvol, CorrMode::kFlow);
  CHECK(fp.levels[1].dim(2) == 2);
  CHECK(fp.levels[1].dim(3) == 4);
  CHECK(mean_of(fp.levels[1]) == doctest::Approx(mean_of(fvol)).epsilon(1e-6));
}

TEST_CASE("corr_lookup: zero field at radius 0 reads the diagonal") {
  Rng rng(9);
  auto ft = random_tensor_f({4, 4, 8}, rng);
  auto fs = random_tensor_f({4, 4, 8}, rng);
  auto pyr = build_pyramid(build_volume(ft, fs, CorrMode::kStereo),
                           CorrMode::kStereo);
  auto out = corr_lookup(pyr, Tensor::zeros({2, 4, 8}), 0);
  REQUIRE(out.dim(0) == 3);
  const auto& vol = pyr.levels[0];
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(out.data()[y * 8 + x] == vol.data()[(y * 8 + x) * 8 + x]);
}

TEST_CASE("corr_lookup: integer displacements hit exact volume entries") {
  Rng rng(11);
  auto ft = random_tensor_f({4, 4, 16}, rng);
  auto fs = random_tensor_f({4, 4, 16}, rng);
  auto pyr = build_pyramid(build_volume(ft, fs, CorrMode::kStereo),
                           CorrMode::kStereo);
  // Choose disparities so the looked-up position is a multiple of 4: integer
  // at every pyramid level, so sampling equals direct indexing.
  auto field = Tensor::zeros({2, 4, 16});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 16; ++x)
      field.data()[y * 16 + x] = float(x - 4 * (x / 4));  // x - d = 4*(x/4)
  auto out = corr_lookup(pyr, field, 1);
  for (int l = 0; l < 3; ++l) {
    const auto& vol = pyr.levels[size_t(l)];
    const int ws = vol.dim(2);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 16; ++x) {
        const int base = (4 * (x / 4)) >> l;
        for (int k = -1; k <= 1; ++k) {
          const int pos = std::clamp(base + k, 0, ws - 1);
          const float want = vol.data()[(y * 16 + x) * ws + pos];
          CHECK(out.data()[((l * 3 + k + 1) * 4 + y) * 16 + x] == want);
        }
      }
  }
}

TEST_CASE("corr_lookup: channel count follows the layout rule") {
  Rng rng(13);
  auto ft = random_tensor_f({4, 4, 16}, rng);
  auto fs = random_tensor_f({4, 4, 16}, rng);
  auto spyr = build_pyramid(build_volume(ft, fs, CorrMode::kStereo),
                            CorrMode::kStereo);
  CHECK(corr_lookup(spyr, Tensor::zeros({2, 4, 16}), 4).dim(0) == 27);
  auto ff = random_tensor_f({4, 4, 8}, rng);
  auto fpyr =
      build_pyramid(build_volume(ff, ff, CorrMode::kFlow), CorrMode::kFlow);
  CHECK(corr_lookup(fpyr, Tensor::zeros({2, 4, 8}), 2).dim(0) == 75);
}

TEST_CASE("corr_lookup: piecewise linear in the displacement inside a cell") {
  Rng rng(15);
  auto ft = random_tensor_f({4, 4, 8}, rng);
  auto fs = random_tensor_f({4, 4, 8}, rng);
  auto pyr = build_pyramid(build_volume(ft, fs, CorrMode::kStereo),
                           CorrMode::kStereo);
  // Displacements within one interpolation cell at every level: base 4.0,
  // offsets within (0, 0.5) keep all levels inside one cell.
  auto make_field = [&](float d) {
    auto f = Tensor::zeros({2, 4, 8});
    for (int64_t i = 0; i < 32; ++i) f.data()[i] = d;
    return f;
  };
  const float d1 = 4.05f, d2 = 4.45f, alpha = 0.3f;
  auto la = corr_lookup(pyr, make_field(d1), 1);
  auto lb = corr_lookup(pyr, make_field(d2), 1);
  auto lm = corr_lookup(pyr, make_field(alpha * d1 + (1 - alpha) * d2), 1);
  for (int64_t i = 0; i < lm.numel(); ++i)
    CHECK(lm.data()[i] ==
          doctest::Approx(alpha * la.data()[i] + (1 - alpha) * lb.data()[i])
              .epsilon(1e-5));
}

TEST_CASE("corr ops: gradients flow into both feature maps") {
  Rng rng(21);
  auto ft = testutil::random_tensor({3, 2, 4}, rng);
  auto fs = testutil::random_tensor({3, 2, 4}, rng);
  auto err = testutil::max_rel_grad_err(
      [&](std::vector<TensorD>& in) {
        Rng prng(2);
        auto pyr = build_pyramid(build_volume(in[0], in[1], CorrMode::kStereo),
                                 CorrMode::kStereo, 2);
        auto field = TensorD::full({2, 2, 4}, 0.7);
        auto feat = corr_lookup(pyr, field, 1);
        auto w = TensorD::zeros(feat.shape());
        for (auto& v : w.vec()) v = prng.normal();
        return sum_all(mul(feat, w));
      },
      {ft, fs});
  CHECK(err < 1e-4);
}
