#pragma once

// Shadow-map quality metrics over probability maps in [0,1] against binary
// ground truth. MAE never binarizes; the confusion-based metrics binarize
// predictions with the >= threshold rule. The F-measure sweep evaluates the
// 256 thresholds i/256 exactly via per-bin histograms: floor(p*256) >= i is
// equivalent to p >= i/256, so the histogram route matches a per-threshold
// rescan bit for bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "umbra/core/error.hpp"
#include "umbra/core/tensor.hpp"

namespace umbra {

inline constexpr double kFBetaSquared = 0.3;
inline constexpr int kFMeasureThresholds = 256;

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  std::int64_t total() const { return tp + fp + tn + fn; }
};

namespace detail {

inline void check_metric_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("metric: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     shape_str(gt.shape()));
  if (pred.size() == 0) throw ShapeError("metric: empty inputs");
}

inline bool gt_positive(double g) { return g >= 0.5; }

}  // namespace detail

/// Mean absolute error between the raw probability map and the ground
/// truth, without any binarization.
inline double mae(const Tensor& pred, const Tensor& gt) {
  detail::check_metric_pair(pred, gt);
  double sum = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - gt[i]);
  return sum / static_cast<double>(pred.size());
}

/// Pixel confusion counts with predictions binarized at `threshold`
/// (>= rule on both prediction and ground truth).
inline ConfusionCounts confusion(const Tensor& pred, const Tensor& gt, double threshold = 0.5) {
  detail::check_metric_pair(pred, gt);
  ConfusionCounts c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] >= threshold;
    bool g = detail::gt_positive(gt[i]);
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

/// Intersection over union of the positive class; an image where both
/// prediction and ground truth are empty scores 1.
inline double iou(const ConfusionCounts& c) {
  std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Balanced error rate in percent: 100*(1 - (recall_pos + recall_neg)/2).
/// A class absent from the ground truth contributes recall 1.
inline double ber(const ConfusionCounts& c) {
  std::int64_t pos = c.tp + c.fn;
  std::int64_t neg = c.tn + c.fp;
  double rp = pos == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(pos);
  double rn = neg == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(neg);
  return 100.0 * (1.0 - 0.5 * (rp + rn));
}

/// Weighted F-measure from raw counts; any zero denominator yields 0.
inline double f_beta(std::int64_t tp, std::int64_t fp, std::int64_t fn,
                     double beta2 = kFBetaSquared) {
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  double denom = beta2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / denom;
}

/// F-measure at a single fixed binarization threshold.
inline double f_measure_fixed(const Tensor& pred, const Tensor& gt, double threshold = 0.5) {
  ConfusionCounts c = confusion(pred, gt, threshold);
  return f_beta(c.tp, c.fp, c.fn);
}

/// Per-bin prediction histograms split by ground-truth class. Bin b counts
/// pixels with floor(p*256) == b (clamped to 255), so the suffix sum from
/// bin i equals the count of pixels with p >= i/256.
struct ThresholdHistogram {
  std::array<std::int64_t, kFMeasureThresholds> pos{};  // ground truth positive
  std::array<std::int64_t, kFMeasureThresholds> neg{};  // ground truth negative
  std::int64_t pos_total = 0;

  ThresholdHistogram& operator+=(const ThresholdHistogram& o) {
    for (int i = 0; i < kFMeasureThresholds; ++i) {
      pos[i] += o.pos[i];
      neg[i] += o.neg[i];
    }
    pos_total += o.pos_total;
    return *this;
  }
};

inline ThresholdHistogram threshold_histogram(const Tensor& pred, const Tensor& gt) {
  detail::check_metric_pair(pred, gt);
  ThresholdHistogram h;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    double p = pred[i];
    if (!(p >= 0.0 && p <= 1.0))
      throw DataError("f-measure sweep: prediction value " + std::to_string(p) +
                      " outside [0, 1]");
    int bin = std::min(kFMeasureThresholds - 1,
                       static_cast<int>(std::floor(p * kFMeasureThresholds)));
    if (detail::gt_positive(gt[i])) {
      ++h.pos[bin];
      ++h.pos_total;
    } else {
      ++h.neg[bin];
    }
  }
  return h;
}

/// Maximum F-measure over the threshold sweep i/256, i = 0..255.
inline double f_measure_max(const ThresholdHistogram& h) {
  double best = 0.0;
  std::int64_t tp = 0, fp = 0;
  // Walk thresholds from high to low, accumulating suffix sums.
  for (int i = kFMeasureThresholds - 1; i >= 0; --i) {
    tp += h.pos[i];
    fp += h.neg[i];
    best = std::max(best, f_beta(tp, fp, h.pos_total - tp));
  }
  return best;
}

inline double f_measure_max(const Tensor& pred, const Tensor& gt) {
  return f_measure_max(threshold_histogram(pred, gt));
}

}  // namespace umbra
