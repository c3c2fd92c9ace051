#include "twins/eval/metrics.hpp"

#include <cmath>
#include <sstream>

namespace twins {
namespace {

void check_class_range(const ClassMap& m, int num_classes, const char* what) {
  for (int32_t id : m.ids)
    if (id < 0 || id >= num_classes)
      throw DataError(std::string(what) + ": class id " + std::to_string(id) +
                      " outside [0," + std::to_string(num_classes) + ")");
}

SegMetrics metrics_from_counts(const std::vector<int64_t>& tp,
                               const std::vector<int64_t>& fp,
                               const std::vector<int64_t>& fn,
                               const std::vector<int64_t>& gt_count) {
  SegMetrics out;
  const int c = int(tp.size());
  out.per_class_iou.assign(size_t(c), -1.0);
  double iou_sum = 0.0, f1_sum = 0.0;
  int present = 0;
  int64_t overlap = 0;
  for (int ci = 0; ci < c; ++ci) {
    if (gt_count[size_t(ci)] == 0) continue;
    ++present;
    overlap += tp[size_t(ci)];
    const double denom_iou =
        double(tp[size_t(ci)] + fp[size_t(ci)] + fn[size_t(ci)]);
    const double denom_f1 =
        double(2 * tp[size_t(ci)] + fp[size_t(ci)] + fn[size_t(ci)]);
    const double iou =
        denom_iou > 0.0 ? double(tp[size_t(ci)]) / denom_iou : 0.0;
    const double f1 =
        denom_f1 > 0.0 ? 2.0 * double(tp[size_t(ci)]) / denom_f1 : 0.0;
    out.per_class_iou[size_t(ci)] = 100.0 * iou;
    iou_sum += iou;
    f1_sum += f1;
  }
  if (present > 0) {
    out.miou = 100.0 * iou_sum / double(present);
    out.mfsc = 100.0 * f1_sum / double(present);
  }
  out.empty_overlap = overlap == 0;
  return out;
}

}  // namespace

SegMetrics seg_metrics(const ClassMap& pred, const ClassMap& gt,
                       int num_classes) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ContractError("seg_metrics: shape mismatch");
  check_class_range(pred, num_classes, "seg_metrics pred");
  check_class_range(gt, num_classes, "seg_metrics gt");
  SegAccumulator acc;
  acc.init(num_classes);
  acc.add(pred, gt);
  return acc.finish();
}

void SegAccumulator::init(int num_classes) {
  tp.assign(size_t(num_classes), 0);
  fp.assign(size_t(num_classes), 0);
  fn.assign(size_t(num_classes), 0);
  gt_count.assign(size_t(num_classes), 0);
}

void SegAccumulator::add(const ClassMap& pred, const ClassMap& gt) {
  for (size_t i = 0; i < gt.ids.size(); ++i) {
    const int32_t p = pred.ids[i], g = gt.ids[i];
    ++gt_count[size_t(g)];
    if (p == g) {
      ++tp[size_t(p)];
    } else {
      ++fp[size_t(p)];
      ++fn[size_t(g)];
    }
  }
}

SegMetrics SegAccumulator::finish() const {
  return metrics_from_counts(tp, fp, fn, gt_count);
}

void CorrAccumulator::add(const Tensor& pred, const Tensor& gt,
                          const Tensor& valid) {
  if (pred.shape() != gt.shape())
    throw ContractError("corr_metrics: shape mismatch");
  const int h = pred.dim(1), w = pred.dim(2);
  if (valid.numel() != int64_t(h) * w)
    throw ContractError("corr_metrics: valid mask size mismatch");
  const int64_t hw = int64_t(h) * w;
  const float* pu = pred.data();
  const float* pv = pred.data() + hw;
  const float* gu = gt.data();
  const float* gv = gt.data() + hw;
  const float* m = valid.data();
  for (int64_t i = 0; i < hw; ++i) {
    if (m[i] == 0.0f) continue;
    const double du = double(pu[i]) - double(gu[i]);
    const double dv = double(pv[i]) - double(gv[i]);
    const double err = std::sqrt(du * du + dv * dv);
    const double mag =
        std::sqrt(double(gu[i]) * gu[i] + double(gv[i]) * gv[i]);
    epe_sum += err;
    if (err > 3.0 && err > 0.05 * mag) ++d1_hits;
    ++count;
  }
}

CorrMetrics CorrAccumulator::finish() const {
  CorrMetrics out;
  out.pixel_count = count;
  if (count == 0) {
    out.empty_mask = true;
    return out;
  }
  out.epe = epe_sum / double(count);
  out.d1 = 100.0 * double(d1_hits) / double(count);
  return out;
}

CorrMetrics corr_metrics(const Tensor& pred, const Tensor& gt,
                         const Tensor& valid) {
  CorrAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.finish();
}

std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os << "collections=" << r.collections << "\n";
  os << "miou=" << r.seg.miou << "\n";
  os << "mfsc=" << r.seg.mfsc << "\n";
  os << "epe=" << r.corr.epe << "\n";
  os << "d1=" << r.corr.d1 << "\n";
  os << "pixel_count=" << r.corr.pixel_count << "\n";
  for (size_t c = 0; c < r.seg.per_class_iou.size(); ++c)
    if (r.seg.per_class_iou[c] >= 0.0)
      os << "iou.class_" << c << "=" << r.seg.per_class_iou[c] << "\n";
  return os.str();
}

}  // namespace twins
