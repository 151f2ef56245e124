// Metrics against independently written per-pixel loops, dataset
// evaluation with its two aggregation modes, partner-window selection,
// and dataset inference output layout.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "umbra/data/synth.hpp"
#include "umbra/eval/evaluate.hpp"
#include "umbra/eval/metrics.hpp"
#include "umbra/infer/infer.hpp"
#include "umbra/net/model.hpp"

using namespace umbra;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("umbra_eval_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Config micro_config(std::uint64_t seed = 0) {
  Config c;
  c.backbone.variant = "tiny";
  c.backbone.tiny_channels = {2, 3, 4};
  c.backbone.tiny_strides = {1, 2, 2};
  c.backbone.embed_channels = 4;
  c.backbone.low_channels = 2;
  c.backbone.aspp_dilations = {1, 2, 3};
  c.data.input_size = 16;
  c.train.seed = seed;
  return c;
}

DatasetIndex micro_test_split(const fs::path& root, std::uint64_t seed = 2) {
  SynthSpec spec;
  spec.n_videos = 2;
  spec.frames_per_video = 4;
  spec.size = 16;
  spec.seed = seed;
  spec.split = "test";
  generate_synthetic(root.string(), spec);
  return index_dataset(root.string(), "test");
}

Tensor rand_map(std::mt19937_64& gen, int h, int w, bool quantized) {
  std::uniform_real_distribution<double> real(0.0, 1.0);
  std::uniform_int_distribution<int> byte(0, 256);
  Tensor t({h, w});
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = quantized ? byte(gen) / 256.0 : real(gen);
  return t;
}

Tensor rand_binary(std::mt19937_64& gen, int h, int w) {
  std::bernoulli_distribution bit(0.4);
  Tensor t({h, w});
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = bit(gen) ? 1.0 : 0.0;
  return t;
}

// Plain per-pixel reference implementations, written independently of the
// library code paths.
struct RefCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

RefCounts ref_confusion(const Tensor& pred, const Tensor& gt, double theta) {
  RefCounts c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] >= theta;
    bool g = gt[i] >= 0.5;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

double ref_mae(const Tensor& pred, const Tensor& gt) {
  double s = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

double ref_iou(const RefCounts& c) {
  std::int64_t d = c.tp + c.fp + c.fn;
  return d == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double ref_ber(const RefCounts& c) {
  double rp = (c.tp + c.fn) == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
  double rn = (c.tn + c.fp) == 0 ? 1.0 : double(c.tn) / double(c.tn + c.fp);
  return 100.0 * (1.0 - 0.5 * (rp + rn));
}

double ref_fbeta(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  double p = double(tp) / double(tp + fp);
  double r = double(tp) / double(tp + fn);
  double denom = 0.3 * p + r;
  return denom == 0.0 ? 0.0 : 1.3 * p * r / denom;
}

double ref_fmax_rescan(const Tensor& pred, const Tensor& gt) {
  double best = 0.0;
  for (int i = 0; i < 256; ++i) {
    RefCounts c = ref_confusion(pred, gt, i / 256.0);
    best = std::max(best, ref_fbeta(c.tp, c.fp, c.fn));
  }
  return best;
}

void save_tensor_png(const fs::path& p, const Tensor& t) {
  fs::create_directories(p.parent_path());
  save_map_png(p.string(), t);
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(MetricMae, MatchesHandValueAndNeverBinarizes) {
  Tensor pred({2, 2}, {0.0, 0.5, 1.0, 0.25});
  Tensor gt({2, 2}, {0.0, 1.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(mae(pred, gt), 0.75 / 4.0);
}

TEST(MetricMae, ComplementIdentityOnBinaryTruth) {
  std::mt19937_64 gen(11);
  Tensor pred = rand_map(gen, 8, 8, false);
  Tensor gt = rand_binary(gen, 8, 8);
  Tensor flipped(pred.shape());
  for (std::int64_t i = 0; i < pred.size(); ++i) flipped[i] = 1.0 - pred[i];
  EXPECT_NEAR(mae(pred, gt) + mae(flipped, gt), 1.0, 1e-12);
}

TEST(MetricConfusion, ThresholdIsInclusive) {
  Tensor gt({1, 2}, {1.0, 0.0});
  ConfusionCounts at = confusion(Tensor({1, 2}, {0.5, 0.5}), gt, 0.5);
  EXPECT_EQ(at.tp, 1);
  EXPECT_EQ(at.fp, 1);
  ConfusionCounts below = confusion(Tensor({1, 2}, {0.4999, 0.4999}), gt, 0.5);
  EXPECT_EQ(below.fn, 1);
  EXPECT_EQ(below.tn, 1);
}

TEST(MetricIoU, HandCountedOverlap) {
  // Prediction marks the top row, truth marks the left column: one pixel
  // in common, three in the union.
  Tensor pred({2, 2}, {1.0, 1.0, 0.0, 0.0});
  Tensor gt({2, 2}, {1.0, 0.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(iou(confusion(pred, gt)), 1.0 / 3.0);
}

TEST(MetricIoU, BothEmptyScoresOne) {
  Tensor zero({3, 3});
  EXPECT_EQ(iou(confusion(zero, zero)), 1.0);
}

TEST(MetricBer, HandCountedCase) {
  // 4 positives (3 hit), 4 negatives (2 hit): recalls 0.75 and 0.5.
  Tensor gt({2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  Tensor pred({2, 4}, {1, 1, 1, 0, 1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(ber(confusion(pred, gt)), 37.5);
}

TEST(MetricBer, AbsentClassCountsAsPerfectRecall) {
  Tensor ones({2, 2}, {1, 1, 1, 1});
  EXPECT_EQ(ber(confusion(ones, ones)), 0.0);
  Tensor zeros({2, 2});
  EXPECT_EQ(ber(confusion(zeros, ones)), 50.0);  // positives all missed
  EXPECT_EQ(ber(confusion(zeros, zeros)), 0.0);
}

TEST(MetricF, HandValueAtFixedThreshold) {
  // tp=1, fp=1, fn=0: precision 0.5, recall 1.
  Tensor pred({1, 2}, {0.9, 0.9});
  Tensor gt({1, 2}, {1.0, 0.0});
  EXPECT_NEAR(f_measure_fixed(pred, gt, 0.5), 1.3 * 0.5 / (0.3 * 0.5 + 1.0), 1e-15);
}

TEST(MetricF, ZeroDenominatorContributesZero) {
  EXPECT_EQ(f_beta(0, 0, 5), 0.0);
  EXPECT_EQ(f_beta(0, 5, 0), 0.0);
  Tensor pred({2, 2}, {0.9, 0.8, 0.7, 0.6});
  Tensor gt({2, 2});  // no positives anywhere
  EXPECT_EQ(f_measure_max(pred, gt), 0.0);
  EXPECT_EQ(f_measure_fixed(pred, gt), 0.0);
}

TEST(MetricF, MaxSweepDominatesFixedThreshold) {
  std::mt19937_64 gen(22);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor pred = rand_map(gen, 8, 8, trial % 2 == 0);
    Tensor gt = rand_binary(gen, 8, 8);
    EXPECT_GE(f_measure_max(pred, gt), f_measure_fixed(pred, gt, 0.5)) << "trial " << trial;
  }
}

TEST(MetricF, SweepMatchesNaiveRescan) {
  std::mt19937_64 gen(33);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor pred = rand_map(gen, 8, 8, trial % 2 == 0);
    Tensor gt = rand_binary(gen, 8, 8);
    EXPECT_DOUBLE_EQ(f_measure_max(pred, gt), ref_fmax_rescan(pred, gt)) << "trial " << trial;
  }
}

TEST(MetricF, SweepRejectsOutOfRangeValues) {
  Tensor gt({1, 1}, {1.0});
  EXPECT_THROW(f_measure_max(Tensor({1, 1}, {1.5}), gt), DataError);
  EXPECT_THROW(f_measure_max(Tensor({1, 1}, {-0.1}), gt), DataError);
}

TEST(MetricShapes, MismatchThrows) {
  Tensor a({2, 2}), b({2, 3});
  EXPECT_THROW(mae(a, b), ShapeError);
  EXPECT_THROW(confusion(a, b), ShapeError);
  EXPECT_THROW(threshold_histogram(a, b), ShapeError);
}

TEST(MetricFuzz, AgreesWithIndependentLoopOnRandomPairs) {
  std::mt19937_64 gen(44);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor pred = rand_map(gen, 8, 8, trial % 4 == 0);
    Tensor gt = rand_binary(gen, 8, 8);

    EXPECT_DOUBLE_EQ(mae(pred, gt), ref_mae(pred, gt));
    RefCounts rc = ref_confusion(pred, gt, 0.5);
    ConfusionCounts c = confusion(pred, gt, 0.5);
    ASSERT_EQ(c.tp, rc.tp);
    ASSERT_EQ(c.fp, rc.fp);
    ASSERT_EQ(c.tn, rc.tn);
    ASSERT_EQ(c.fn, rc.fn);
    EXPECT_DOUBLE_EQ(iou(c), ref_iou(rc));
    EXPECT_DOUBLE_EQ(ber(c), ref_ber(rc));
    EXPECT_DOUBLE_EQ(f_beta(c.tp, c.fp, c.fn), ref_fbeta(rc.tp, rc.fp, rc.fn));
    ASSERT_NEAR(f_measure_max(pred, gt), ref_fmax_rescan(pred, gt), 1e-12) << "trial " << trial;
  }
}

TEST(MetricFuzz, PermutationInvariance) {
  std::mt19937_64 gen(55);
  Tensor pred = rand_map(gen, 8, 8, false);
  Tensor gt = rand_binary(gen, 8, 8);
  Tensor pred_r(pred.shape()), gt_r(gt.shape());
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    pred_r[pred.size() - 1 - i] = pred[i];
    gt_r[gt.size() - 1 - i] = gt[i];
  }
  EXPECT_NEAR(mae(pred, gt), mae(pred_r, gt_r), 1e-12);
  ConfusionCounts a = confusion(pred, gt), b = confusion(pred_r, gt_r);
  EXPECT_EQ(a.tp, b.tp);
  EXPECT_EQ(a.fp, b.fp);
  EXPECT_EQ(a.tn, b.tn);
  EXPECT_EQ(a.fn, b.fn);
  EXPECT_EQ(f_measure_max(pred, gt), f_measure_max(pred_r, gt_r));
}

// ---------------------------------------------------------------------------

TEST(PartnerWindow, SubsequentFramesComeFirst) {
  EXPECT_EQ(partner_indices(7, 0, 5), (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(partner_indices(10, 2, 5), (std::vector<int>{3, 4, 5, 6, 7}));
}

TEST(PartnerWindow, BackfillsPrecedingNearestFirst) {
  EXPECT_EQ(partner_indices(7, 6, 5), (std::vector<int>{5, 4, 3, 2, 1}));
  EXPECT_EQ(partner_indices(7, 4, 5), (std::vector<int>{5, 6, 3, 2, 1}));
  EXPECT_EQ(partner_indices(7, 5, 5), (std::vector<int>{6, 4, 3, 2, 1}));
}

TEST(PartnerWindow, ShortVideosYieldWhatTheyHave) {
  EXPECT_EQ(partner_indices(3, 0, 5), (std::vector<int>{1, 2}));
  EXPECT_EQ(partner_indices(2, 1, 5), (std::vector<int>{0}));
  EXPECT_TRUE(partner_indices(1, 0, 5).empty());
}

TEST(PartnerWindow, RejectsBadArguments) {
  EXPECT_THROW(partner_indices(0, 0, 5), DataError);
  EXPECT_THROW(partner_indices(5, -1, 5), Error);
  EXPECT_THROW(partner_indices(5, 5, 5), Error);
  EXPECT_THROW(partner_indices(5, 0, 0), ConfigError);
}

TEST(InferFrame, IdenticalPerPairMapsAverageToTheSameMap) {
  fs::path dir = fresh_dir("infer_avg");
  SynthSpec spec;
  spec.n_videos = 2;
  spec.frames_per_video = 6;
  spec.size = 16;
  spec.seed = 5;
  generate_synthetic(dir.string(), spec);
  DatasetIndex index = index_dataset(dir.string(), "train");

  // With cross-frame coupling switched off, every partner yields the same
  // per-pair map, so the average must reproduce it exactly.
  Config c = micro_config(3);
  c.train.enable_coattention = false;
  Model m(c);
  const VideoSequence& video = index.videos[0];

  Tensor averaged = infer_frame(m, video, 0, c.data, 5);

  ag::NoGradGuard ng;
  auto [img0, mask0] = load_frame(video.frames[0], 16, c.data.mean, c.data.std);
  auto [img1, mask1] = load_frame(video.frames[1], 16, c.data.mean, c.data.std);
  (void)mask0;
  (void)mask1;
  ag::Var logits = m.forward_pair(img0, img1);
  ASSERT_EQ(averaged.shape(), logits->value.shape());
  for (std::int64_t i = 0; i < averaged.size(); ++i) {
    double single = 1.0 / (1.0 + std::exp(-logits->value[i]));
    ASSERT_EQ(averaged[i], single) << "pixel " << i;
  }
}

TEST(InferFrame, PartnersActuallyChangeTheMapWhenCouplingIsOn) {
  fs::path dir = fresh_dir("infer_coupled");
  SynthSpec spec;
  spec.n_videos = 2;
  spec.frames_per_video = 6;
  spec.size = 16;
  spec.seed = 6;
  generate_synthetic(dir.string(), spec);
  DatasetIndex index = index_dataset(dir.string(), "train");

  Model m(micro_config(4));
  const VideoSequence& video = index.videos[0];
  Tensor wide = infer_frame(m, video, 0, m.config().data, 5);
  Tensor narrow = infer_frame(m, video, 0, m.config().data, 1);
  double diff = 0;
  for (std::int64_t i = 0; i < wide.size(); ++i) diff += std::fabs(wide[i] - narrow[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(InferDataset, MirrorsLayoutAndWritesManifest) {
  fs::path dir = fresh_dir("infer_ds");
  SynthSpec spec;
  spec.n_videos = 2;
  spec.frames_per_video = 4;
  spec.size = 16;
  spec.seed = 7;
  spec.split = "test";
  generate_synthetic(dir.string(), spec);
  DatasetIndex index = index_dataset(dir.string(), "test");

  Model m(micro_config(5));
  fs::path out = dir / "preds";
  InferReport report = infer_dataset(m, index, out.string(), 5);

  EXPECT_EQ(report.failures, 0);
  EXPECT_EQ(report.frames.size(), 8u);
  for (const VideoSequence& video : index.videos)
    for (const FrameRecord& rec : video.frames) {
      fs::path p = out / video.video_id / (fs::path(rec.image_path).stem().string() + ".png");
      EXPECT_TRUE(fs::exists(p)) << p;
    }
  ASSERT_TRUE(fs::exists(out / "manifest.json"));
  std::ifstream mf(out / "manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  EXPECT_EQ(manifest["window"], 5);
  EXPECT_EQ(manifest["failures"], 0);
  EXPECT_EQ(manifest["frames"].size(), 8u);
  for (const auto& f : manifest["frames"]) EXPECT_TRUE(f["ok"].get<bool>());

  // A second run must reproduce the same bytes.
  fs::path out2 = dir / "preds2";
  infer_dataset(m, index, out2.string(), 5);
  fs::path sample = fs::path(index.videos[0].video_id) /
                    (fs::path(index.videos[0].frames[0].image_path).stem().string() + ".png");
  std::ifstream f1(out / sample, std::ios::binary), f2(out2 / sample, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  ASSERT_FALSE(b1.empty());
  EXPECT_EQ(b1, b2);
}

TEST(InferDataset, PerFrameFailuresAreRecordedAndRunContinues) {
  fs::path dir = fresh_dir("infer_fail");
  SynthSpec spec;
  spec.n_videos = 2;
  spec.frames_per_video = 4;
  spec.size = 16;
  spec.seed = 8;
  spec.split = "test";
  generate_synthetic(dir.string(), spec);
  DatasetIndex index = index_dataset(dir.string(), "test");

  // Append a one-frame video: it has no partners, so its frame must fail
  // while the rest of the run completes.
  VideoSequence lonely;
  lonely.video_id = "lonely";
  FrameRecord rec;
  rec.video_id = "lonely";
  rec.frame_index = 0;
  rec.image_path = (dir / "does_not_matter" / "00000.jpg").string();
  rec.mask_path = rec.image_path;
  lonely.frames.push_back(rec);
  index.videos.insert(index.videos.begin(), lonely);

  Model m(micro_config(6));
  fs::path out = dir / "preds";
  InferReport report = infer_dataset(m, index, out.string(), 5);
  EXPECT_EQ(report.failures, 1);
  EXPECT_EQ(report.frames.size(), 9u);
  EXPECT_FALSE(report.frames[0].ok);
  EXPECT_NE(report.frames[0].error.find("partner"), std::string::npos);
  int ok_count = 0;
  for (const auto& f : report.frames) ok_count += f.ok ? 1 : 0;
  EXPECT_EQ(ok_count, 8);
}

// ---------------------------------------------------------------------------

TEST(EvaluateDataset, PerfectPredictionsScorePerfectly) {
  fs::path dir = fresh_dir("eval_perfect");
  DatasetIndex index = micro_test_split(dir);
  fs::path preds = dir / "preds";
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames) {
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      save_tensor_png(preds / v.video_id / (fs::path(rec.image_path).stem().string() + ".png"),
                      gt);
    }

  EvalReport r = evaluate_predictions(index, preds.string());
  EXPECT_EQ(r.frames_evaluated, 8);
  EXPECT_TRUE(r.missing.empty());
  for (const MetricSet* m : {&r.frame_mean, &r.count_sum}) {
    EXPECT_EQ(m->mae, 0.0);
    EXPECT_EQ(m->iou, 1.0);
    EXPECT_EQ(m->ber, 0.0);
    EXPECT_EQ(m->f_fixed, 1.0);
    EXPECT_EQ(m->f_max, 1.0);
  }
  ASSERT_EQ(r.per_video.size(), 2u);
  for (const VideoEval& v : r.per_video) {
    EXPECT_EQ(v.frames, 4);
    EXPECT_EQ(v.frame_mean.iou, 1.0);
  }
}

TEST(EvaluateDataset, InvertedPredictionsScoreZero) {
  fs::path dir = fresh_dir("eval_inverted");
  DatasetIndex index = micro_test_split(dir, 3);
  fs::path preds = dir / "preds";
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames) {
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      Tensor inv(gt.shape());
      for (std::int64_t i = 0; i < gt.size(); ++i) inv[i] = 1.0 - gt[i];
      save_tensor_png(preds / v.video_id / (fs::path(rec.image_path).stem().string() + ".png"),
                      inv);
    }

  EvalReport r = evaluate_predictions(index, preds.string());
  EXPECT_EQ(r.frame_mean.mae, 1.0);
  EXPECT_EQ(r.frame_mean.iou, 0.0);
  EXPECT_EQ(r.frame_mean.ber, 100.0);
  EXPECT_EQ(r.count_sum.iou, 0.0);
  EXPECT_EQ(r.count_sum.ber, 100.0);
}

TEST(EvaluateDataset, MissingPredictionsAreListedAndExcluded) {
  fs::path dir = fresh_dir("eval_missing");
  DatasetIndex index = micro_test_split(dir, 4);
  fs::path preds = dir / "preds";
  std::string dropped;
  int written = 0;
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames) {
      std::string stem = fs::path(rec.image_path).stem().string();
      if (dropped.empty()) {
        dropped = v.video_id + "/" + stem + ".png";
        continue;  // deliberately not written
      }
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      save_tensor_png(preds / v.video_id / (stem + ".png"), gt);
      ++written;
    }

  EvalReport r = evaluate_predictions(index, preds.string());
  EXPECT_EQ(r.frames_evaluated, written);
  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_EQ(r.missing[0], dropped);
  EXPECT_EQ(r.frame_mean.iou, 1.0);  // the rest are perfect
}

TEST(EvaluateDataset, BothAggregationsMatchIndependentRecomputation) {
  fs::path dir = fresh_dir("eval_recompute");
  DatasetIndex index = micro_test_split(dir, 5);
  fs::path preds = dir / "preds";
  std::mt19937_64 gen(99);
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames)
      save_tensor_png(preds / v.video_id / (fs::path(rec.image_path).stem().string() + ".png"),
                      rand_map(gen, 16, 16, false));

  EvalReport r = evaluate_predictions(index, preds.string());

  // Re-derive both aggregation blocks with the plain reference loops.
  double sum_mae = 0, sum_fmax = 0, sum_ffixed = 0, sum_iou = 0, sum_ber = 0;
  double abs_err = 0;
  std::int64_t pixels = 0, n = 0;
  RefCounts pooled;
  std::vector<std::int64_t> pooled_pos(256, 0), pooled_neg(256, 0);
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames) {
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      Tensor pred = load_mask_raw(
          (preds / v.video_id / (fs::path(rec.image_path).stem().string() + ".png")).string());
      for (std::int64_t i = 0; i < pred.size(); ++i) pred[i] /= 255.0;

      sum_mae += ref_mae(pred, gt);
      RefCounts c = ref_confusion(pred, gt, 0.5);
      sum_iou += ref_iou(c);
      sum_ber += ref_ber(c);
      sum_ffixed += ref_fbeta(c.tp, c.fp, c.fn);
      sum_fmax += ref_fmax_rescan(pred, gt);
      ++n;

      pooled.tp += c.tp;
      pooled.fp += c.fp;
      pooled.tn += c.tn;
      pooled.fn += c.fn;
      for (std::int64_t i = 0; i < pred.size(); ++i) {
        abs_err += std::fabs(pred[i] - gt[i]);
        int bin = std::min(255, static_cast<int>(std::floor(pred[i] * 256.0)));
        (gt[i] >= 0.5 ? pooled_pos : pooled_neg)[bin]++;
      }
      pixels += pred.size();
    }

  EXPECT_NEAR(r.frame_mean.mae, sum_mae / n, 1e-12);
  EXPECT_NEAR(r.frame_mean.iou, sum_iou / n, 1e-12);
  EXPECT_NEAR(r.frame_mean.ber, sum_ber / n, 1e-12);
  EXPECT_NEAR(r.frame_mean.f_fixed, sum_ffixed / n, 1e-12);
  EXPECT_NEAR(r.frame_mean.f_max, sum_fmax / n, 1e-12);

  EXPECT_NEAR(r.count_sum.mae, abs_err / pixels, 1e-12);
  EXPECT_DOUBLE_EQ(r.count_sum.iou, ref_iou(pooled));
  EXPECT_DOUBLE_EQ(r.count_sum.ber, ref_ber(pooled));
  EXPECT_DOUBLE_EQ(r.count_sum.f_fixed, ref_fbeta(pooled.tp, pooled.fp, pooled.fn));
  std::int64_t pos_total = pooled.tp + pooled.fn;
  double best = 0;
  std::int64_t tp = 0, fp = 0;
  for (int i = 255; i >= 0; --i) {
    tp += pooled_pos[i];
    fp += pooled_neg[i];
    best = std::max(best, ref_fbeta(tp, fp, pos_total - tp));
  }
  EXPECT_DOUBLE_EQ(r.count_sum.f_max, best);
}

TEST(EvaluateDataset, PredictionsAreResampledToTruthResolution) {
  fs::path dir = fresh_dir("eval_resample");
  // Hand-built one-frame dataset with an all-shadow 16x16 mask.
  fs::path images = dir / "test" / "images" / "v0";
  fs::path labels = dir / "test" / "labels" / "v0";
  fs::create_directories(images);
  fs::create_directories(labels);
  Tensor img({3, 16, 16});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = 0.5;
  save_image_jpg((images / "00000.jpg").string(), img);
  Tensor mask({16, 16});
  for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = 1.0;
  save_tensor_png(labels / "00000.png", mask);
  // Second frame so the index accepts the video; keep it perfect.
  save_image_jpg((images / "00001.jpg").string(), img);
  save_tensor_png(labels / "00001.png", mask);

  DatasetIndex index = index_dataset(dir.string(), "test");
  fs::path preds = dir / "preds";
  Tensor small({8, 8});
  for (std::int64_t i = 0; i < small.size(); ++i) small[i] = 1.0;
  save_tensor_png(preds / "v0" / "00000.png", small);       // upsampled 8x8 -> 16x16
  Tensor full({16, 16});
  for (std::int64_t i = 0; i < full.size(); ++i) full[i] = 1.0;
  save_tensor_png(preds / "v0" / "00001.png", full);

  EvalReport r = evaluate_predictions(index, preds.string());
  EXPECT_EQ(r.frames_evaluated, 2);
  EXPECT_EQ(r.frame_mean.iou, 1.0);
  EXPECT_EQ(r.frame_mean.mae, 0.0);
}

TEST(EvaluateDataset, ReportCarriesBothBlocksInTextAndJson) {
  fs::path dir = fresh_dir("eval_report");
  DatasetIndex index = micro_test_split(dir, 6);
  fs::path preds = dir / "preds";
  bool first = true;
  for (const VideoSequence& v : index.videos)
    for (const FrameRecord& rec : v.frames) {
      if (first) {
        first = false;
        continue;  // leave one missing so that section renders too
      }
      Tensor gt = binarize_mask(load_mask_raw(rec.mask_path));
      save_tensor_png(preds / v.video_id / (fs::path(rec.image_path).stem().string() + ".png"),
                      gt);
    }

  EvalReport r = evaluate_predictions(index, preds.string());
  nlohmann::json j = eval_report_to_json(r);
  for (const char* key : {"frame_mean", "count_sum", "per_video", "missing", "frames_evaluated"})
    EXPECT_TRUE(j.contains(key)) << key;
  for (const char* metric : {"mae", "f_max", "f_fixed", "iou", "ber"}) {
    EXPECT_TRUE(j["frame_mean"].contains(metric)) << metric;
    EXPECT_TRUE(j["count_sum"].contains(metric)) << metric;
  }
  EXPECT_EQ(j["missing"].size(), 1u);

  std::string text = eval_report_to_text(r);
  EXPECT_NE(text.find("frame-mean"), std::string::npos);
  EXPECT_NE(text.find("count-sum"), std::string::npos);
  EXPECT_NE(text.find("missing predictions (1)"), std::string::npos);
  EXPECT_NE(text.find("MAE"), std::string::npos);
  EXPECT_NE(text.find("BER"), std::string::npos);
}
