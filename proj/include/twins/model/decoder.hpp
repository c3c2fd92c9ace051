#pragma once

#include "twins/core/nn.hpp"
#include "twins/data/synth.hpp"
#include "twins/model/cta.hpp"

namespace twins {

struct DecoderConfig {
  int num_queries = 0;  // 0 -> 2 * num_classes
  int dim = 128;
  int num_classes = 0;
  int attn_rounds = 3;
};

// Learnable queries after refinement plus their heads.
struct QuerySet {
  Tensor embeddings;       // (N_q, C_dec)
  Tensor class_logits;     // (N_q, num_classes + 1), last slot = no-object
  Tensor mask_embeddings;  // (N_q, C_dec)
};

struct SegmentationOutput {
  Tensor per_pixel_logits;  // (num_classes, H, W) probability-weighted masks
  Tensor per_query_masks;   // (N_q, H, W), sigmoid
  Tensor mask_logits_quarter;  // (N_q, H/4 * W/4), pre-sigmoid, for the loss
  QuerySet queries;
  int num_classes = 0;
};

struct SegLossReport {
  Tensor total;
  Tensor pixel_ce;
  Tensor query_ce;
  Tensor mask_bce;
};

// Simplified query-based mask decoder: FPN pixel decoder at 1/4 resolution,
// cross-attention query refinement over successively finer levels, semantic
// map as the class-probability-weighted sum of query masks.
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(ParamRegistry& reg, const std::string& prefix,
              const std::array<int, 4>& stage_channels,
              const DecoderConfig& cfg);

  SegmentationOutput decode(const FusedFeatures& fused) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Round {
    Linear wq, wk, wv, wo;
    RMSNorm norm_attn, norm_ffn;
    Linear ffn_in, ffn_out;
  };
  DecoderConfig cfg_;
  std::array<Conv2d, 4> lateral_;
  std::array<SepConv2d, 3> fpn_fuse_;
  Conv2d pixel_embed_;
  Tensor query_embed_;
  std::array<Round, 3> rounds_;
  Linear class_head_, mask_head_;
};

// Cross entropy on the aggregated semantic map plus an auxiliary per-query
// loss with greedy class-to-query assignment.
SegLossReport seg_loss(const SegmentationOutput& out, const ClassMap& gt);

// Argmax class map from a decoded output.
ClassMap predict_classes(const SegmentationOutput& out);

}  // namespace twins
