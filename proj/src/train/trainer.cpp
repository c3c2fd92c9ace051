#include "twins/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace twins {

float compute_threshold(const Tensor& sigma, float alpha) {
  if (!(alpha > 0.5f && alpha < 1.0f))
    throw ConfigError("alpha must lie strictly in (0.5, 1), got " +
                      std::to_string(alpha));
  if (!sigma.defined() || sigma.numel() == 0)
    throw ContractError("compute_threshold: empty uncertainty map");
  std::vector<float> vals(sigma.vec());
  std::sort(vals.begin(), vals.end());
  const size_t n = vals.size();
  const float mu = n % 2 == 1
                       ? vals[n / 2]
                       : 0.5f * (vals[n / 2 - 1] + vals[n / 2]);
  double dev = 0.0;
  for (float v : vals) dev += std::fabs(double(v) - double(mu));
  const float b = float(dev / double(n));
  return mu + b * std::log(2.0f * (1.0f - alpha));
}

PseudoLabelSet make_pseudo_labels(const IterationTrace& trace,
                                  const Tensor& sigma, float alpha) {
  if (trace.fields.empty())
    throw ContractError("make_pseudo_labels: empty trace");
  PseudoLabelSet out;
  out.threshold_used = compute_threshold(sigma, alpha);
  out.correspondences = trace.fields.back().detach();
  const int h = out.correspondences.dim(1), w = out.correspondences.dim(2);
  if (sigma.numel() != int64_t(h) * w)
    throw ContractError("make_pseudo_labels: sigma size mismatch");
  out.validity = Tensor::zeros({1, h, w});
  int64_t selected = 0;
  for (int64_t i = 0; i < int64_t(h) * w; ++i) {
    if (sigma.data()[i] < out.threshold_used) {
      out.validity.data()[i] = 1.0f;
      ++selected;
    }
  }
  out.coverage = float(double(selected) / double(int64_t(h) * w));
  return out;
}

void ema_update_params(ParamRegistry& teacher, const ParamRegistry& student,
                       float momentum) {
  const auto& titems = teacher.items();
  const auto& sitems = student.items();
  if (titems.size() != sitems.size())
    throw ContractError("ema: parameter count mismatch (corrupt state)");
  for (size_t i = 0; i < titems.size(); ++i) {
    auto t = titems[i].second;
    const auto& s = sitems[i].second;
    if (titems[i].first != sitems[i].first || t.shape() != s.shape())
      throw ContractError("ema: parameter " + titems[i].first +
                          " does not match student (corrupt checkpoint)");
    if (momentum == 1.0f) continue;
    if (momentum == 0.0f) {
      std::copy(s.vec().begin(), s.vec().end(), t.vec().begin());
      continue;
    }
    float* td = t.data();
    const float* sd = s.data();
    for (int64_t j = 0; j < t.numel(); ++j)
      td[j] = momentum * td[j] + (1.0f - momentum) * sd[j];
  }
}

void copy_params(ParamRegistry& dst, const ParamRegistry& src) {
  ema_update_params(dst, src, 0.0f);
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg,
                 uint64_t seed)
    : mcfg_(mcfg), tcfg_(tcfg), seed_(seed) {
  if (!(tcfg.ema_momentum >= 0.0f && tcfg.ema_momentum <= 1.0f))
    throw ConfigError("ema momentum must lie in [0,1]");
  student_ = std::make_unique<TwinsModel>(mcfg_, seed);
  teacher_ = std::make_unique<TwinsModel>(mcfg_, seed + 1);
  copy_params(teacher_->params(), student_->params());
  optim_ = std::make_unique<AdamW>(student_->params(), tcfg.optim);
}

namespace {

float finite_item(const Tensor& t, const char* term, int64_t step,
                  std::ostringstream& dump) {
  const float v = t.item();
  dump << term << "=" << v << " ";
  if (!std::isfinite(v))
    throw NumericalError("non-finite loss term '" + std::string(term) +
                         "' at step " + std::to_string(step) +
                         " (terms so far: " + dump.str() + ")");
  return v;
}

// Mean over valid pixels of the L1 norm of the field error.
Tensor masked_l1(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                 float count) {
  const int n = pred.dim(1) * pred.dim(2);
  auto residual = l1_residual_map(pred, gt);
  auto mask = reshape(valid, {n}).detach();
  return mul_scalar(sum_all(mul(residual, mask)), 1.0f / count);
}

}  // namespace

LossReport Trainer::run_step(const ImageCollection& weak_batch,
                             const ImageCollection& strong_batch,
                             const Tensor& corr_gt, const Tensor& corr_valid,
                             float coverage) {
  (void)weak_batch;
  LossReport report;
  report.coverage = coverage;
  auto out = student_->forward(strong_batch.target_image,
                               strong_batch.source_image);
  std::ostringstream dump;
  Tensor total = Tensor::scalar(0.0f);

  if (strong_batch.has_segmentation()) {
    auto seg = seg_loss(out.seg, strong_batch.gt_segmentation);
    report.seg_ce = finite_item(seg.pixel_ce, "seg_ce", step_, dump);
    report.seg_query = finite_item(seg.query_ce, "seg_query", step_, dump);
    report.seg_mask = finite_item(seg.mask_bce, "seg_mask", step_, dump);
    total = add(total, mul_scalar(seg.total, tcfg_.seg_weight));
  }

  if (corr_gt.defined()) {
    float count = 0.0f;
    for (float v : corr_valid.vec()) count += v;
    if (count > 0.0f) {
      const int k = int(out.trace.fields.size());
      const float gamma = mcfg_.refine.gamma;
      Tensor seq = Tensor::scalar(0.0f);
      for (int i = 0; i < k; ++i) {
        const float wk = std::pow(gamma, float(k - 1 - i));
        seq = add(seq, mul_scalar(masked_l1(out.trace.fields[size_t(i)],
                                            corr_gt, corr_valid, count),
                                  wk));
      }
      report.l1_seq = finite_item(seq, "l1_seq", step_, dump);
      total = add(total, mul_scalar(seq, tcfg_.corr_weight));

      if (out.sigma.defined()) {
        auto nll =
            laplace_nll(out.trace.fields.back(), corr_gt, out.sigma, corr_valid);
        report.nll = finite_item(nll.value, "nll", step_, dump);
        total = add(total, mul_scalar(nll.value, tcfg_.nll_weight));
        auto residuals = l1_residual_map(out.trace.fields.back(), corr_gt);
        auto kl = kl_alignment(out.sigma, residuals.detach(),
                               corr_valid, mcfg_.unc.bins);
        report.kl = finite_item(kl.value, "kl", step_, dump);
        total = add(total, mul_scalar(kl.value, mcfg_.unc.lambda_kl));
      }
    }
  }

  report.total = finite_item(total, "total", step_, dump);
  total.backward();
  report.grad_norm = optim_->step();
  ema_update_params(teacher_->params(), student_->params(),
                    tcfg_.ema_momentum);
  ++step_;
  return report;
}

LossReport Trainer::supervised_step(const ImageCollection& batch) {
  Rng rng = Rng::derive(seed_, 0xA06, uint64_t(step_));
  AugmentationPair aug(tcfg_.aug, batch.mode, batch.height(), batch.width(),
                       rng);
  auto strong = aug.apply_strong(batch);
  return run_step(strong, strong, strong.gt_correspondence, strong.gt_validity,
                  -1.0f);
}

LossReport Trainer::semi_supervised_step(const ImageCollection& batch) {
  Rng rng = Rng::derive(seed_, 0xA06, uint64_t(step_));
  AugmentationPair aug(tcfg_.aug, batch.mode, batch.height(), batch.width(),
                       rng);
  // No correspondence supervision in this regime; pseudo-labels come from
  // the teacher run on the weakly augmented pair.
  ImageCollection unlabeled = batch;
  unlabeled.gt_correspondence = Tensor();
  unlabeled.gt_validity = Tensor();
  auto weak = aug.apply_weak(unlabeled);
  PseudoLabelSet pseudo;
  {
    NoGradGuard off;
    auto tout = teacher_->forward(weak.target_image, weak.source_image);
    if (!tout.sigma.defined())
      throw ConfigError("semi-supervised training requires K >= 2");
    pseudo = make_pseudo_labels(tout.trace, tout.sigma, tcfg_.alpha);
  }
  if (pseudo.coverage == 0.0f) {
    ++skipped_;
    LossReport report;
    report.skipped = true;
    report.coverage = 0.0f;
    return report;
  }
  auto [corr, valid] =
      aug.transfer_labels(pseudo.correspondences, pseudo.validity);
  auto strong = aug.apply_strong(unlabeled);
  return run_step(weak, strong, corr, valid, pseudo.coverage);
}

CheckpointData Trainer::to_checkpoint() const {
  CheckpointData data;
  data.meta["step"] = step_;
  data.meta["skipped"] = skipped_;
  data.meta["adam_step"] = optim_->step_count();
  data.meta["seed"] = int64_t(seed_);
  for (const auto& [name, t] : student_->params().items())
    data.put("student/" + name, t.shape(), t.vec());
  for (const auto& [name, t] : teacher_->params().items())
    data.put("teacher/" + name, t.shape(), t.vec());
  const auto& items = student_->params().items();
  for (size_t i = 0; i < items.size(); ++i) {
    data.put("optim/m/" + items[i].first, items[i].second.shape(),
             optim_->moment1()[i]);
    data.put("optim/v/" + items[i].first, items[i].second.shape(),
             optim_->moment2()[i]);
  }
  return data;
}

void Trainer::from_checkpoint(const CheckpointData& data) {
  auto restore = [&](ParamRegistry& reg, const std::string& prefix) {
    for (auto& [name, t] : reg.items()) {
      const auto* payload = data.get(prefix + name);
      if (!payload)
        throw FormatError("checkpoint missing array: " + prefix + name);
      if (payload->first != t.shape())
        throw FormatError("checkpoint shape mismatch for " + prefix + name);
      Tensor mut = t;
      std::copy(payload->second.begin(), payload->second.end(),
                mut.vec().begin());
    }
  };
  restore(student_->params(), "student/");
  restore(teacher_->params(), "teacher/");
  const auto& items = student_->params().items();
  for (size_t i = 0; i < items.size(); ++i) {
    const auto* m = data.get("optim/m/" + items[i].first);
    const auto* v = data.get("optim/v/" + items[i].first);
    if (!m || !v)
      throw FormatError("checkpoint missing optimizer state for " +
                        items[i].first);
    optim_->moment1()[i] = m->second;
    optim_->moment2()[i] = v->second;
  }
  step_ = data.meta.count("step") ? data.meta.at("step") : 0;
  skipped_ = data.meta.count("skipped") ? data.meta.at("skipped") : 0;
  optim_->set_step_count(
      data.meta.count("adam_step") ? data.meta.at("adam_step") : 0);
}

MetricReport evaluate_split(const TwinsModel& model,
                            const std::string& split_dir, int limit) {
  NoGradGuard off;
  MetricReport report;
  SegAccumulator seg_acc;
  seg_acc.init(model.config().num_classes);
  CorrAccumulator corr_acc;
  auto ids = list_collections(split_dir);
  if (limit > 0 && int(ids.size()) > limit) ids.resize(size_t(limit));
  for (const auto& id : ids) {
    auto c = read_collection(split_dir + "/" + id);
    auto out = model.forward(c.target_image, c.source_image);
    if (c.has_segmentation())
      seg_acc.add(predict_classes(out.seg), c.gt_segmentation);
    if (c.has_correspondence())
      corr_acc.add(out.trace.fields.back(), c.gt_correspondence,
                   c.gt_validity);
    ++report.collections;
  }
  report.seg = seg_acc.finish();
  report.corr = corr_acc.finish();
  return report;
}

}  // namespace twins
