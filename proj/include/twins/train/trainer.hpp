#pragma once

#include <memory>
#include <optional>

#include "twins/core/checkpoint.hpp"
#include "twins/core/optim.hpp"
#include "twins/data/augment.hpp"
#include "twins/eval/metrics.hpp"
#include "twins/model/twins_model.hpp"

namespace twins {

// Sparse correspondences selected by uncertainty thresholding.
struct PseudoLabelSet {
  Tensor correspondences;  // (2,H,W), final-iteration field
  Tensor validity;         // (1,H,W), 1 where sigma < threshold
  float threshold_used = 0.0f;
  float coverage = 0.0f;   // mean(validity)
};

// tau = mu + b * log(2(1 - alpha)), with mu the median of sigma and b the
// mean absolute deviation around it. alpha must lie strictly in (0.5, 1).
float compute_threshold(const Tensor& sigma, float alpha);

PseudoLabelSet make_pseudo_labels(const IterationTrace& trace,
                                  const Tensor& sigma, float alpha);

// teacher <- m * teacher + (1 - m) * student, per parameter.
void ema_update_params(ParamRegistry& teacher, const ParamRegistry& student,
                       float momentum);
void copy_params(ParamRegistry& dst, const ParamRegistry& src);

struct TrainConfig {
  AdamWConfig optim;
  float seg_weight = 1.0f;
  float corr_weight = 1.0f;
  float nll_weight = 1.0f;
  float alpha = 0.75f;
  float ema_momentum = 0.999f;
  AugmentationConfig aug;
};

struct LossReport {
  float total = 0.0f;
  float seg_ce = 0.0f, seg_query = 0.0f, seg_mask = 0.0f;
  float l1_seq = 0.0f, nll = 0.0f, kl = 0.0f;
  float grad_norm = 0.0f;
  float coverage = -1.0f;  // semi-supervised steps only
  bool skipped = false;
};

// Teacher-student training state. The teacher shares the architecture,
// receives no gradients, and tracks the student through EMA updates.
class Trainer {
 public:
  Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, uint64_t seed);

  LossReport supervised_step(const ImageCollection& batch);
  LossReport semi_supervised_step(const ImageCollection& batch);

  TwinsModel& student() { return *student_; }
  TwinsModel& teacher() { return *teacher_; }
  const TwinsModel& student() const { return *student_; }
  const TwinsModel& teacher() const { return *teacher_; }
  AdamW& optimizer() { return *optim_; }
  TrainConfig& config() { return tcfg_; }

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }
  int64_t skipped_batches() const { return skipped_; }
  uint64_t seed() const { return seed_; }

  CheckpointData to_checkpoint() const;
  void from_checkpoint(const CheckpointData& data);

 private:
  LossReport run_step(const ImageCollection& weak_batch,
                      const ImageCollection& strong_batch,
                      const Tensor& corr_gt, const Tensor& corr_valid,
                      float coverage);

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  uint64_t seed_ = 0;
  std::unique_ptr<TwinsModel> student_, teacher_;
  std::unique_ptr<AdamW> optim_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
};

// Runs the model over a split; correspondence metrics use the stored
// validity mask (occluded pixels excluded), segmentation uses argmax labels.
MetricReport evaluate_split(const TwinsModel& model,
                            const std::string& split_dir, int limit = -1);

}  // namespace twins
