#include "twins/model/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace twins {
namespace {

// Numerically stable binary cross entropy from logits against soft targets.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  auto zero_floor = relu(logits);                       // max(x, 0)
  auto xt = mul(logits, targets);                       // x * t
  auto softplus = log_op(add_scalar(exp_op(neg(abs_op(logits))), 1.0f));
  return mean_all(add(sub(zero_floor, xt), softplus));
}

}  // namespace

MaskDecoder::MaskDecoder(ParamRegistry& reg, const std::string& prefix,
                         const std::array<int, 4>& stage_channels,
                         const DecoderConfig& cfg_in)
    : cfg_(cfg_in) {
  if (cfg_.num_classes < 1) throw ConfigError("decoder: num_classes must be >= 1");
  if (cfg_.num_queries == 0) cfg_.num_queries = 2 * cfg_.num_classes;
  if (cfg_.num_queries < cfg_.num_classes)
    throw ConfigError("decoder: need at least one query per class");
  const int d = cfg_.dim;
  for (int i = 0; i < 4; ++i)
    lateral_[size_t(i)] = Conv2d(reg, prefix + ".lat" + std::to_string(i + 1),
                                 stage_channels[size_t(i)], d, 1, 1, 0);
  for (int i = 0; i < 3; ++i)
    fpn_fuse_[size_t(i)] =
        SepConv2d(reg, prefix + ".fuse" + std::to_string(i + 1), d, d, 3);
  pixel_embed_ = Conv2d(reg, prefix + ".pix", d, d, 1, 1, 0);
  query_embed_ = reg.normal(prefix + ".queries", {cfg_.num_queries, d}, 0.02f);
  for (int r = 0; r < 3; ++r) {
    Round& rd = rounds_[size_t(r)];
    const std::string rp = prefix + ".round" + std::to_string(r);
    rd.wq = Linear(reg, rp + ".wq", d, d);
    rd.wk = Linear(reg, rp + ".wk", d, d);
    rd.wv = Linear(reg, rp + ".wv", d, d);
    rd.wo = Linear(reg, rp + ".wo", d, d);
    rd.norm_attn = RMSNorm(reg, rp + ".na", d);
    rd.norm_ffn = RMSNorm(reg, rp + ".nf", d);
    rd.ffn_in = Linear(reg, rp + ".f0", d, 2 * d);
    rd.ffn_out = Linear(reg, rp + ".f1", 2 * d, d);
  }
  class_head_ = Linear(reg, prefix + ".cls", d, cfg_.num_classes + 1);
  mask_head_ = Linear(reg, prefix + ".msk", d, d);
}

SegmentationOutput MaskDecoder::decode(const FusedFeatures& fused) const {
  const int d = cfg_.dim;
  // Top-down FPN.
  std::array<Tensor, 4> p;
  p[3] = lateral_[3].forward(fused.levels[3]);
  for (int i = 2; i >= 0; --i) {
    auto lat = lateral_[size_t(i)].forward(fused.levels[size_t(i)]);
    auto up = bilinear_resize(p[size_t(i + 1)], lat.dim(1), lat.dim(2));
    p[size_t(i)] = fpn_fuse_[size_t(i)].forward(add(lat, up));
  }
  const int hq = p[0].dim(1), wq = p[0].dim(2);
  auto pix = pixel_embed_.forward(p[0]);  // (d, H/4, W/4)

  // Query refinement against successively finer levels: P3, P2, P1.
  Tensor q = query_embed_;
  const float scale = 1.0f / std::sqrt(float(d));
  for (int r = 0; r < cfg_.attn_rounds; ++r) {
    const Round& rd = rounds_[size_t(std::min(r, 2))];
    auto tokens = map_to_tokens(p[size_t(2 - std::min(r, 2))]);
    auto qn = rd.norm_attn.forward(q);
    auto attn_scores = mul_scalar(
        matmul(rd.wq.forward(qn), transpose2d(rd.wk.forward(tokens))), scale);
    auto attn = matmul(softmax(attn_scores, 1), rd.wv.forward(tokens));
    q = add(q, rd.wo.forward(attn));
    auto qf = rd.norm_ffn.forward(q);
    q = add(q, rd.ffn_out.forward(gelu(rd.ffn_in.forward(qf))));
  }

  SegmentationOutput out;
  out.num_classes = cfg_.num_classes;
  out.queries.embeddings = q;
  out.queries.class_logits = class_head_.forward(q);
  out.queries.mask_embeddings = mask_head_.forward(q);

  // (N_q, Npix) mask logits at quarter resolution.
  auto pix_tokens = reshape(pix, {d, hq * wq});
  out.mask_logits_quarter = matmul(out.queries.mask_embeddings, pix_tokens);

  // Full-resolution sigmoid masks: upsample logits, then squash.
  const int hf = hq * 4, wf = wq * 4;
  auto logits_maps = reshape(out.mask_logits_quarter,
                             {cfg_.num_queries, hq, wq});
  auto up_logits = bilinear_resize(logits_maps, hf, wf);
  out.per_query_masks = sigmoid(up_logits);

  // Semantic aggregation: sum_q p(c|q) * mask_q, no-object slot dropped.
  auto probs = softmax(out.queries.class_logits, 1);
  auto probs_c = slice(probs, 1, 0, cfg_.num_classes);  // (N_q, C)
  auto masks_flat = reshape(out.per_query_masks, {cfg_.num_queries, hf * wf});
  out.per_pixel_logits = reshape(matmul(transpose2d(probs_c), masks_flat),
                                 {cfg_.num_classes, hf, wf});
  return out;
}

SegLossReport seg_loss(const SegmentationOutput& out, const ClassMap& gt) {
  const int c = out.num_classes;
  const int h = out.per_pixel_logits.dim(1), w = out.per_pixel_logits.dim(2);
  if (gt.h != h || gt.w != w)
    throw ContractError("seg_loss: ground truth size mismatch");
  for (int32_t id : gt.ids)
    if (id < 0 || id >= c)
      throw DataError("seg_loss: class id " + std::to_string(id) +
                      " outside [0," + std::to_string(c) + ")");

  // Pixel term: normalize the non-negative aggregated scores into
  // probabilities; perfect one-hot scores then cost ~0, uniform costs ln C.
  const float delta = 1e-8f;
  const int64_t npix = int64_t(h) * w;
  auto scores = reshape(out.per_pixel_logits, {c, int(npix)});
  auto shifted = add_scalar(scores, delta);
  auto colsum = sum_axis0(shifted);
  auto probs = div_bcast(shifted, colsum, 1);
  // Gather p_gt per pixel with a constant one-hot mask.
  Tensor onehot = Tensor::zeros({c, int(npix)});
  for (int64_t i = 0; i < npix; ++i)
    onehot.data()[size_t(gt.ids[size_t(i)]) * npix + i] = 1.0f;
  auto p_gt = sum_axis0(mul(probs, onehot));  // (npix)
  auto pixel_ce = neg(mean_all(log_op(p_gt)));

  // Greedy class-to-query assignment on class probabilities.
  const int nq = out.queries.class_logits.dim(0);
  auto class_probs = softmax(out.queries.class_logits, 1);
  std::vector<int> classes_present;
  {
    std::vector<bool> seen(size_t(c), false);
    for (int32_t id : gt.ids) seen[size_t(id)] = true;
    for (int ci = 0; ci < c; ++ci)
      if (seen[size_t(ci)]) classes_present.push_back(ci);
  }
  std::vector<int> assigned(size_t(nq), -1);
  {
    struct Cand {
      float p;
      int q, cls;
    };
    std::vector<Cand> cands;
    for (int q = 0; q < nq; ++q)
      for (int ci : classes_present)
        cands.push_back({class_probs.data()[size_t(q) * (c + 1) + ci], q, ci});
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return a.p > b.p; });
    std::vector<bool> class_taken(size_t(c), false);
    for (const Cand& cd : cands) {
      if (class_taken[size_t(cd.cls)] || assigned[size_t(cd.q)] != -1) continue;
      assigned[size_t(cd.q)] = cd.cls;
      class_taken[size_t(cd.cls)] = true;
    }
  }

  // Per-query class CE (matched -> class, unmatched -> no-object slot) and
  // mask BCE against the class region pooled to quarter resolution.
  const int hq = h / 4, wq = w / 4;
  Tensor class_onehot = Tensor::zeros({nq, c + 1});
  for (int q = 0; q < nq; ++q) {
    const int target = assigned[size_t(q)] >= 0 ? assigned[size_t(q)] : c;
    class_onehot.data()[size_t(q) * (c + 1) + target] = 1.0f;
  }
  auto logp = log_op(add_scalar(class_probs, 1e-12f));
  auto query_ce = neg(mean_all(sum_axis0(transpose2d(mul(logp, class_onehot)))));

  Tensor mask_bce;
  {
    std::vector<Tensor> logit_rows, target_rows;
    for (int q = 0; q < nq; ++q) {
      if (assigned[size_t(q)] < 0) continue;
      const int cls = assigned[size_t(q)];
      Tensor region = Tensor::zeros({1, h, w});
      for (int64_t i = 0; i < npix; ++i)
        if (gt.ids[size_t(i)] == cls) region.data()[i] = 1.0f;
      auto region_q = avg_pool_last(avg_pool_last(region, 2), 2);  // (1,hq,wq)
      target_rows.push_back(reshape(region_q, {1, hq * wq}));
      logit_rows.push_back(slice(out.mask_logits_quarter, 0, q, 1));
    }
    if (logit_rows.empty()) {
      mask_bce = Tensor::scalar(0.0f);
    } else {
      mask_bce = bce_with_logits(concat(logit_rows, 0), concat(target_rows, 0));
    }
  }

  SegLossReport report;
  report.pixel_ce = pixel_ce;
  report.query_ce = query_ce;
  report.mask_bce = mask_bce;
  report.total = add(pixel_ce, add(mul_scalar(query_ce, 0.5f),
                                   mul_scalar(mask_bce, 0.5f)));
  return report;
}

ClassMap predict_classes(const SegmentationOutput& out) {
  const int c = out.num_classes;
  const int h = out.per_pixel_logits.dim(1), w = out.per_pixel_logits.dim(2);
  ClassMap m;
  m.h = h;
  m.w = w;
  m.ids.resize(size_t(h) * w);
  const float* d = out.per_pixel_logits.data();
  const int64_t hw = int64_t(h) * w;
  for (int64_t i = 0; i < hw; ++i) {
    int best = 0;
    float bv = d[i];
    for (int ci = 1; ci < c; ++ci)
      if (d[ci * hw + i] > bv) {
        bv = d[ci * hw + i];
        best = ci;
      }
    m.ids[size_t(i)] = best;
  }
  return m;
}

}  // namespace twins
