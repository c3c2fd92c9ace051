#pragma once

#include <string>
#include <vector>

#include "twins/data/synth.hpp"

namespace twins {

struct SegMetrics {
  double miou = 0.0;   // percent, mean over classes present in gt
  double mfsc = 0.0;   // percent
  std::vector<double> per_class_iou;  // percent; -1 for absent classes
  bool empty_overlap = false;
};

struct CorrMetrics {
  double epe = 0.0;  // pixels
  double d1 = 0.0;   // percent
  int64_t pixel_count = 0;
  bool empty_mask = false;
};

// Per-class IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN); classes absent from
// gt are excluded from the means.
SegMetrics seg_metrics(const ClassMap& pred, const ClassMap& gt,
                       int num_classes);

// EPE = mean valid ||pred-gt||_2; D1 = % of valid pixels with error > 3 px
// AND error > 0.05 * ||gt||_2 (both strict).
CorrMetrics corr_metrics(const Tensor& pred, const Tensor& gt,
                         const Tensor& valid);

// Streaming aggregation across a dataset split.
struct SegAccumulator {
  std::vector<int64_t> tp, fp, fn, gt_count;
  void init(int num_classes);
  void add(const ClassMap& pred, const ClassMap& gt);
  SegMetrics finish() const;
};

struct CorrAccumulator {
  double epe_sum = 0.0;
  int64_t d1_hits = 0;
  int64_t count = 0;
  void add(const Tensor& pred, const Tensor& gt, const Tensor& valid);
  CorrMetrics finish() const;
};

struct MetricReport {
  SegMetrics seg;
  CorrMetrics corr;
  int64_t collections = 0;
};

std::string format_report(const MetricReport& r);

}  // namespace twins
