#pragma once

// Dataset evaluation: walks the ground-truth index, pairs each frame with
// its predicted map, and reports MAE, max/fixed F-measure, IoU, and BER
// under two aggregations — the mean of per-frame scores and the scores of
// the pooled pixel counts. Frames with no prediction file are listed and
// excluded; the caller decides the exit status.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbra/core/error.hpp"
#include "umbra/core/ops.hpp"
#include "umbra/core/tensor.hpp"
#include "umbra/data/dataset.hpp"
#include "umbra/data/image.hpp"
#include "umbra/eval/metrics.hpp"

namespace umbra {

struct MetricSet {
  double mae = 0, f_max = 0, f_fixed = 0, iou = 0, ber = 0;
};

struct VideoEval {
  std::string video_id;
  std::int64_t frames = 0;
  MetricSet frame_mean;
};

struct EvalReport {
  MetricSet frame_mean;              // mean of per-frame metric values
  MetricSet count_sum;               // metrics recomputed from pooled counts
  std::vector<VideoEval> per_video;  // per-frame means within each video
  std::vector<std::string> missing;  // ground-truth frames without predictions
  std::int64_t frames_evaluated = 0;
};

namespace detail {

/// Loads a predicted map PNG as (H,W) probabilities in [0,1], resampling
/// bilinearly to the ground-truth resolution when the sizes differ.
inline Tensor load_prediction(const std::string& path, int gt_h, int gt_w) {
  Tensor raw = load_mask_raw(path);
  for (std::int64_t i = 0; i < raw.size(); ++i) raw[i] /= 255.0;
  if (raw.dim(0) == gt_h && raw.dim(1) == gt_w) return raw;
  ag::NoGradGuard ng;
  int h = raw.dim(0), w = raw.dim(1);
  ag::Var as3 = ag::reshape(ag::constant(std::move(raw)), {1, h, w});
  Tensor resized =
      ag::reshape(ag::bilinear_resize(as3, gt_h, gt_w), {gt_h, gt_w})->value;
  for (std::int64_t i = 0; i < resized.size(); ++i)
    resized[i] = std::clamp(resized[i], 0.0, 1.0);
  return resized;
}

struct MetricSums {
  MetricSet sum;
  std::int64_t frames = 0;
  void add(const MetricSet& m) {
    sum.mae += m.mae;
    sum.f_max += m.f_max;
    sum.f_fixed += m.f_fixed;
    sum.iou += m.iou;
    sum.ber += m.ber;
    ++frames;
  }
  MetricSet mean() const {
    MetricSet m;
    if (!frames) return m;
    double inv = 1.0 / static_cast<double>(frames);
    m.mae = sum.mae * inv;
    m.f_max = sum.f_max * inv;
    m.f_fixed = sum.f_fixed * inv;
    m.iou = sum.iou * inv;
    m.ber = sum.ber * inv;
    return m;
  }
};

}  // namespace detail

/// Evaluates the predictions under `pred_root` (mirroring the dataset
/// layout, `<video>/<stem>.png`) against the ground truth in `index`.
inline EvalReport evaluate_predictions(const DatasetIndex& index, const std::string& pred_root) {
  namespace fs = std::filesystem;
  EvalReport report;
  detail::MetricSums overall;
  double abs_err_sum = 0;
  std::int64_t pixel_count = 0;
  ConfusionCounts pooled;
  ThresholdHistogram pooled_hist;

  for (const VideoSequence& video : index.videos) {
    detail::MetricSums video_sums;
    for (const FrameRecord& rec : video.frames) {
      std::string stem = fs::path(rec.image_path).stem().string();
      fs::path pred_path = fs::path(pred_root) / video.video_id / (stem + ".png");
      if (!fs::exists(pred_path)) {
        report.missing.push_back(video.video_id + "/" + stem + ".png");
        continue;
      }
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      Tensor pred = detail::load_prediction(pred_path.string(), gt.dim(0), gt.dim(1));

      MetricSet m;
      m.mae = mae(pred, gt);
      ConfusionCounts c = confusion(pred, gt, 0.5);
      m.iou = iou(c);
      m.ber = ber(c);
      m.f_fixed = f_beta(c.tp, c.fp, c.fn);
      ThresholdHistogram h = threshold_histogram(pred, gt);
      m.f_max = f_measure_max(h);

      video_sums.add(m);
      overall.add(m);
      for (std::int64_t i = 0; i < pred.size(); ++i) abs_err_sum += std::abs(pred[i] - gt[i]);
      pixel_count += pred.size();
      pooled += c;
      pooled_hist += h;
    }
    if (video_sums.frames) {
      VideoEval ve;
      ve.video_id = video.video_id;
      ve.frames = video_sums.frames;
      ve.frame_mean = video_sums.mean();
      report.per_video.push_back(ve);
    }
  }

  report.frames_evaluated = overall.frames;
  report.frame_mean = overall.mean();
  if (pixel_count) {
    report.count_sum.mae = abs_err_sum / static_cast<double>(pixel_count);
    report.count_sum.iou = iou(pooled);
    report.count_sum.ber = ber(pooled);
    report.count_sum.f_fixed = f_beta(pooled.tp, pooled.fp, pooled.fn);
    report.count_sum.f_max = f_measure_max(pooled_hist);
  }
  return report;
}

inline nlohmann::json metric_set_to_json(const MetricSet& m) {
  return {{"mae", m.mae}, {"f_max", m.f_max}, {"f_fixed", m.f_fixed}, {"iou", m.iou},
          {"ber", m.ber}};
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["frames_evaluated"] = r.frames_evaluated;
  j["frame_mean"] = metric_set_to_json(r.frame_mean);
  j["count_sum"] = metric_set_to_json(r.count_sum);
  j["per_video"] = nlohmann::json::array();
  for (const VideoEval& v : r.per_video) {
    nlohmann::json e;
    e["video"] = v.video_id;
    e["frames"] = v.frames;
    e["frame_mean"] = metric_set_to_json(v.frame_mean);
    j["per_video"].push_back(e);
  }
  j["missing"] = r.missing;
  return j;
}

inline std::string eval_report_to_text(const EvalReport& r) {
  auto row = [](const std::string& label, const MetricSet& m, std::int64_t frames) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s %8lld  %7.4f  %7.4f  %7.4f  %7.4f  %7.2f\n",
                  label.c_str(), static_cast<long long>(frames), m.mae, m.f_max, m.f_fixed,
                  m.iou, m.ber);
    return std::string(buf);
  };
  std::string out;
  out += "metric set        frames      MAE     Fmax   F@0.50      IoU      BER\n";
  out += row("frame-mean", r.frame_mean, r.frames_evaluated);
  out += row("count-sum", r.count_sum, r.frames_evaluated);
  if (!r.per_video.empty()) {
    out += "\nper video (frame-mean):\n";
    for (const VideoEval& v : r.per_video) out += row(v.video_id, v.frame_mean, v.frames);
  }
  if (!r.missing.empty()) {
    out += "\nmissing predictions (" + std::to_string(r.missing.size()) + "):\n";
    for (const std::string& m : r.missing) out += "  " + m + "\n";
  }
  return out;
}

}  // namespace umbra
