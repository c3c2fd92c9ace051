#pragma once

#include <memory>

#include "twins/core/optim.hpp"
#include "twins/model/backbone.hpp"
#include "twins/model/cta.hpp"
#include "twins/model/decoder.hpp"
#include "twins/model/refinement.hpp"
#include "twins/model/uncertainty.hpp"

namespace twins {

struct ModelConfig {
  BackboneConfig backbone;
  RefineConfig refine;
  CtaConfig cta;
  DecoderConfig decoder;
  UncertaintyConfig unc;
  CorrMode mode = CorrMode::kStereo;
  int num_classes = 5;
  // Off: the geometric stream runs on its own small encoder instead of the
  // scene-parsing features (independent-encoder ablation baseline).
  bool context_infusion = true;
  // Which stage-1 features build the correlation volume.
  std::string corr_source = "stage";  // stage|early|late
};

struct ModelOutput {
  IterationTrace trace;
  Tensor sigma;  // (1,H,W); undefined when iters < 2
  SegmentationOutput seg;
};

// Two interacting streams: scene parsing (encoder + query decoder) and
// geometric correspondence (correlation pyramid + recurrent refinement),
// exchanging features in both directions.
class TwinsModel {
 public:
  TwinsModel(const ModelConfig& cfg, uint64_t seed);

  ModelOutput forward(const Tensor& target, const Tensor& source) const {
    return forward(target, source, cfg_.refine.iters);
  }
  ModelOutput forward(const Tensor& target, const Tensor& source,
                      int iters) const;

  ParamRegistry& params() { return *reg_; }
  const ParamRegistry& params() const { return *reg_; }
  const ModelConfig& config() const { return cfg_; }
  const Refinement& refinement() const { return refine_; }
  const Backbone& encoder() const { return encoder_; }
  const UncertaintyHead& uncertainty_head() const { return unc_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamRegistry> reg_;
  Backbone encoder_;
  std::unique_ptr<Backbone> ctx_encoder_;
  std::array<AlignBlock, 3> align_early_, align_late_;
  Refinement refine_;
  CrossTaskAdapter cta_;
  MaskDecoder decoder_;
  UncertaintyHead unc_;
};

ModelConfig default_model_config();

}  // namespace twins
