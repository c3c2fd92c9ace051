#include "twins/model/twins_model.hpp"

namespace twins {

ModelConfig default_model_config() { return ModelConfig{}; }

TwinsModel::TwinsModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.decoder.num_classes = cfg_.num_classes;
  cfg_.unc.iters = cfg_.refine.iters;
  if (cfg_.refine.hidden_width % cfg_.backbone.gn_groups != 0)
    throw ConfigError("hidden width must be divisible by backbone.groups");
  if (cfg_.corr_source != "stage" && cfg_.corr_source != "early" &&
      cfg_.corr_source != "late")
    throw ConfigError("corr_source must be stage|early|late, got " +
                      cfg_.corr_source);
  reg_ = std::make_unique<ParamRegistry>(seed);
  encoder_ = Backbone(*reg_, "enc", cfg_.backbone);
  if (!cfg_.context_infusion)
    ctx_encoder_ = std::make_unique<Backbone>(*reg_, "ctxenc", cfg_.backbone);
  for (int i = 0; i < 3; ++i) {
    const int cin = cfg_.backbone.channels[size_t(i)];
    align_early_[size_t(i)] =
        AlignBlock(*reg_, "align.e" + std::to_string(i + 1), cin,
                   cfg_.refine.hidden_width, cfg_.backbone.gn_groups);
    align_late_[size_t(i)] =
        AlignBlock(*reg_, "align.l" + std::to_string(i + 1), cin,
                   cfg_.refine.hidden_width, cfg_.backbone.gn_groups);
  }
  refine_ = Refinement(*reg_, "refine", cfg_.refine, cfg_.mode);
  cta_ = CrossTaskAdapter(*reg_, "cta", cfg_.backbone.channels,
                          cfg_.refine.hidden_width, cfg_.cta);
  decoder_ = MaskDecoder(*reg_, "dec", cfg_.backbone.channels, cfg_.decoder);
  if (cfg_.refine.iters >= 2)
    unc_ = UncertaintyHead(*reg_, "unc", cfg_.unc);
}

ModelOutput TwinsModel::forward(const Tensor& target, const Tensor& source,
                                int iters) const {
  if (target.shape() != source.shape())
    throw ContractError("forward: target/source shapes differ");
  auto [pyr_t, taps_t] = encoder_.encode(target);

  // Geometric-stream features: shared with parsing, or from the
  // independent context encoder in the ablation baseline.
  FeaturePyramid geo_pyr_t = pyr_t;
  EarlyLateTaps geo_taps_t = taps_t;
  FeaturePyramid geo_pyr_s;
  EarlyLateTaps geo_taps_s;
  if (cfg_.context_infusion) {
    auto [ps, ts] = encoder_.encode(source);
    geo_pyr_s = ps;
    geo_taps_s = ts;
  } else {
    auto [pt, tt] = ctx_encoder_->encode(target);
    geo_pyr_t = pt;
    geo_taps_t = tt;
    auto [ps, ts] = ctx_encoder_->encode(source);
    geo_pyr_s = ps;
    geo_taps_s = ts;
  }

  auto corr_feat_of = [&](const FeaturePyramid& p,
                          const EarlyLateTaps& t) -> const Tensor& {
    if (cfg_.corr_source == "early") return t.early[0];
    if (cfg_.corr_source == "late") return t.late[0];
    return p.stages[0];
  };
  auto volume = build_volume(corr_feat_of(geo_pyr_t, geo_taps_t),
                             corr_feat_of(geo_pyr_s, geo_taps_s), cfg_.mode);
  auto pyr = build_pyramid(volume, cfg_.mode, cfg_.refine.corr_levels);

  std::array<Tensor, 3> aligned_early, aligned_late;
  for (int i = 0; i < 3; ++i) {
    aligned_early[size_t(i)] =
        align_early_[size_t(i)].forward(geo_taps_t.early[size_t(i)]);
    aligned_late[size_t(i)] =
        align_late_[size_t(i)].forward(geo_taps_t.late[size_t(i)]);
  }

  ModelOutput out;
  out.trace = refine_.refine(pyr, aligned_early, aligned_late, iters);
  // The head's input width is tied to the configured K.
  if (iters == cfg_.refine.iters && iters >= 2)
    out.sigma = unc_.estimate(out.trace.fields);

  std::array<std::pair<int, int>, 3> sizes;
  for (int i = 0; i < 3; ++i)
    sizes[size_t(i)] = {pyr_t.stages[size_t(i)].dim(1),
                        pyr_t.stages[size_t(i)].dim(2)};
  auto hidden = cta_.align_hidden(out.trace.final_hidden, sizes);
  auto fused = cta_.fuse(pyr_t, hidden);
  out.seg = decoder_.decode(fused);
  return out;
}

}  // namespace twins
