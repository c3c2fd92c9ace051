#pragma once

#include <array>

#include "twins/core/nn.hpp"

namespace twins {

// Multi-scale contextual features F_i at strides 4/8/16/32.
template <typename T>
struct FeaturePyramidT {
  std::array<TensorT<T>, 4> stages;
};

// Taps from the first (early) and last (late) conv block of stages 1-3.
template <typename T>
struct EarlyLateTapsT {
  std::array<TensorT<T>, 3> early;
  std::array<TensorT<T>, 3> late;
};

using FeaturePyramid = FeaturePyramidT<float>;
using EarlyLateTaps = EarlyLateTapsT<float>;

struct BackboneConfig {
  std::array<int, 4> channels{48, 96, 192, 384};
  int gn_groups = 8;
  bool use_norm = true;  // group norm in blocks; off keeps features strictly
                         // local to the conv receptive field
};

// Four-stage encoder: stride-4 stem, then stride-2 downsampling convs, two
// residual 3x3 blocks per stage. Shared (Siamese) across target and source.
template <typename T>
class BackboneT {
 public:
  BackboneT() = default;
  BackboneT(ParamRegistryT<T>& reg, const std::string& prefix,
            const BackboneConfig& cfg);

  std::pair<FeaturePyramidT<T>, EarlyLateTapsT<T>> encode(
      const TensorT<T>& image) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Block {
    Conv2dT<T> c1, c2;
    GroupNormT<T> n1, n2;
  };
  TensorT<T> run_block(const Block& b, const TensorT<T>& x) const;

  Conv2dT<T> stem_;
  std::array<Conv2dT<T>, 3> down_;          // stages 2..4
  std::array<std::array<Block, 2>, 4> blocks_;
  std::array<GroupNormT<T>, 4> stage_norm_;  // after downsampling conv
  BackboneConfig cfg_;
};

// Channel alignment unit: ReLU(GroupNorm(Conv1x1(x))). Independent weights
// per tap per level.
template <typename T>
class AlignBlockT {
 public:
  AlignBlockT() = default;
  AlignBlockT(ParamRegistryT<T>& reg, const std::string& prefix, int cin,
              int target_channels, int gn_groups);
  // GroupNorm(Conv(x)), before rectification.
  TensorT<T> pre_activation(const TensorT<T>& x) const;
  TensorT<T> forward(const TensorT<T>& x) const;

 private:
  Conv2dT<T> proj_;
  GroupNormT<T> norm_;
};

using Backbone = BackboneT<float>;
using AlignBlock = AlignBlockT<float>;

}  // namespace twins
