#include "twins/model/backbone.hpp"

namespace twins {

template <typename T>
BackboneT<T>::BackboneT(ParamRegistryT<T>& reg, const std::string& prefix,
                        const BackboneConfig& cfg)
    : cfg_(cfg) {
  const auto& ch = cfg.channels;
  for (int i = 1; i < 4; ++i)
    if (ch[size_t(i)] < ch[size_t(i - 1)])
      throw ConfigError("backbone channels must be non-decreasing");
  stem_ = Conv2dT<T>(reg, prefix + ".stem", 3, ch[0], 4, 4, 0);
  for (int s = 0; s < 4; ++s) {
    const std::string sp = prefix + ".s" + std::to_string(s + 1);
    if (s > 0)
      down_[size_t(s - 1)] =
          Conv2dT<T>(reg, sp + ".down", ch[size_t(s - 1)], ch[size_t(s)], 2, 2, 0);
    if (cfg.use_norm)
      stage_norm_[size_t(s)] =
          GroupNormT<T>(reg, sp + ".norm", ch[size_t(s)], cfg.gn_groups);
    for (int b = 0; b < 2; ++b) {
      Block& blk = blocks_[size_t(s)][size_t(b)];
      const std::string bp = sp + ".b" + std::to_string(b);
      blk.c1 = Conv2dT<T>(reg, bp + ".c1", ch[size_t(s)], ch[size_t(s)], 3, 1, 1);
      blk.c2 = Conv2dT<T>(reg, bp + ".c2", ch[size_t(s)], ch[size_t(s)], 3, 1, 1);
      if (cfg.use_norm) {
        blk.n1 = GroupNormT<T>(reg, bp + ".n1", ch[size_t(s)], cfg.gn_groups);
        blk.n2 = GroupNormT<T>(reg, bp + ".n2", ch[size_t(s)], cfg.gn_groups);
      }
    }
  }
}

template <typename T>
TensorT<T> BackboneT<T>::run_block(const Block& b, const TensorT<T>& x) const {
  auto y = b.c1.forward(x);
  if (cfg_.use_norm) y = b.n1.forward(y);
  y = relu(y);
  y = b.c2.forward(y);
  if (cfg_.use_norm) y = b.n2.forward(y);
  return relu(add(x, y));
}

template <typename T>
std::pair<FeaturePyramidT<T>, EarlyLateTapsT<T>> BackboneT<T>::encode(
    const TensorT<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ContractError("encode expects a (3,H,W) image");
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
    throw ConfigError("encode: image size must be divisible by 32, got " +
                      std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(1)));
  FeaturePyramidT<T> pyr;
  EarlyLateTapsT<T> taps;
  TensorT<T> x = image;
  for (int s = 0; s < 4; ++s) {
    x = s == 0 ? stem_.forward(x) : down_[size_t(s - 1)].forward(x);
    if (cfg_.use_norm) x = stage_norm_[size_t(s)].forward(x);
    x = relu(x);
    const auto first = run_block(blocks_[size_t(s)][0], x);
    const auto last = run_block(blocks_[size_t(s)][1], first);
    if (s < 3) {
      taps.early[size_t(s)] = first;
      taps.late[size_t(s)] = last;
    }
    pyr.stages[size_t(s)] = last;
    x = last;
  }
  return {pyr, taps};
}

template <typename T>
AlignBlockT<T>::AlignBlockT(ParamRegistryT<T>& reg, const std::string& prefix,
                            int cin, int target_channels, int gn_groups) {
  if (target_channels <= 0) throw ConfigError("align: target_channels <= 0");
  if (target_channels % gn_groups != 0)
    throw ConfigError("align: group count " + std::to_string(gn_groups) +
                      " does not divide channels " +
                      std::to_string(target_channels));
  proj_ = Conv2dT<T>(reg, prefix + ".proj", cin, target_channels, 1, 1, 0);
  norm_ = GroupNormT<T>(reg, prefix + ".norm", target_channels, gn_groups);
}

template <typename T>
TensorT<T> AlignBlockT<T>::pre_activation(const TensorT<T>& x) const {
  return norm_.forward(proj_.forward(x));
}

template <typename T>
TensorT<T> AlignBlockT<T>::forward(const TensorT<T>& x) const {
  return relu(pre_activation(x));
}

template class BackboneT<float>;
template class BackboneT<double>;
template class AlignBlockT<float>;
template class AlignBlockT<double>;

}  // namespace twins
