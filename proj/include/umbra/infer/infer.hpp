#pragma once

// Sliding-window inference: each frame is paired with a window of other
// frames from the same video, every pair runs through the two-branch
// forward pass, and the sigmoid maps are averaged into one probability
// map per frame. Dataset-level runs mirror the input layout on disk and
// record a JSON manifest; a failure on one frame does not stop the run.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbra/config.hpp"
#include "umbra/core/error.hpp"
#include "umbra/core/graph.hpp"
#include "umbra/data/dataset.hpp"
#include "umbra/data/image.hpp"
#include "umbra/net/model.hpp"

namespace umbra {

/// Partner frames for frame `t` in a video of `len` frames: the `k`
/// subsequent frames; when fewer exist, preceding frames fill the window
/// nearest-first. Videos shorter than k+1 frames yield what they have.
inline std::vector<int> partner_indices(int len, int t, int k) {
  if (len <= 0) throw DataError("partner_indices: empty video");
  if (t < 0 || t >= len)
    throw Error("partner_indices: frame " + std::to_string(t) + " outside [0, " +
                std::to_string(len) + ")");
  if (k <= 0) throw ConfigError("partner_indices: window must be positive");
  std::vector<int> out;
  for (int j = t + 1; j < len && static_cast<int>(out.size()) < k; ++j) out.push_back(j);
  for (int j = t - 1; j >= 0 && static_cast<int>(out.size()) < k; --j) out.push_back(j);
  return out;
}

/// Probability map for one frame: mean of the sigmoid maps over its
/// partner window. The mean is computed as base + sum-of-differences so
/// identical per-pair maps reproduce the single map exactly.
inline Tensor infer_frame(const Model& model, const VideoSequence& video, int t,
                          const DataConfig& dc, int window) {
  int len = static_cast<int>(video.frames.size());
  std::vector<int> partners = partner_indices(len, t, window);
  if (partners.empty())
    throw DataError("video " + video.video_id + " has no partner frames for inference");
  ag::NoGradGuard ng;
  auto [img, mask] = load_frame(video.frames[t], dc.input_size, dc.mean, dc.std);
  (void)mask;
  Tensor base, diff_sum;
  for (std::size_t i = 0; i < partners.size(); ++i) {
    auto [pimg, pmask] = load_frame(video.frames[partners[i]], dc.input_size, dc.mean, dc.std);
    (void)pmask;
    ag::Var logits = model.forward_pair(img, pimg);
    Tensor map(logits->value.shape());
    for (std::int64_t j = 0; j < map.size(); ++j)
      map[j] = 1.0 / (1.0 + std::exp(-logits->value[j]));
    if (i == 0) {
      base = map;
      diff_sum = Tensor(map.shape());
    } else {
      for (std::int64_t j = 0; j < map.size(); ++j) diff_sum[j] += map[j] - base[j];
    }
  }
  double inv = 1.0 / static_cast<double>(partners.size());
  Tensor out(base.shape());
  for (std::int64_t j = 0; j < out.size(); ++j) out[j] = base[j] + diff_sum[j] * inv;
  return out;
}

struct FrameInferRecord {
  std::string video_id;
  int frame_index = 0;
  std::string output_path;
  double millis = 0;
  bool ok = false;
  std::string error;
};

struct InferReport {
  std::vector<FrameInferRecord> frames;
  int failures = 0;
  double total_seconds = 0;
};

inline nlohmann::json infer_report_to_json(const InferReport& report, int window) {
  nlohmann::json j;
  j["window"] = window;
  j["failures"] = report.failures;
  j["total_seconds"] = report.total_seconds;
  j["frames"] = nlohmann::json::array();
  for (const FrameInferRecord& f : report.frames) {
    nlohmann::json e;
    e["video"] = f.video_id;
    e["frame"] = f.frame_index;
    e["output"] = f.output_path;
    e["ms"] = f.millis;
    e["ok"] = f.ok;
    if (!f.ok) e["error"] = f.error;
    j["frames"].push_back(e);
  }
  return j;
}

/// Runs inference over every frame in the index, writing one 8-bit
/// grayscale PNG per frame under `out_root/<video>/<stem>.png` plus a
/// `manifest.json`. Per-frame errors are recorded and the run continues.
inline InferReport infer_dataset(const Model& model, const DatasetIndex& index,
                                 const std::string& out_root, int window) {
  namespace fs = std::filesystem;
  const DataConfig& dc = model.config().data;
  InferReport report;
  auto run_start = std::chrono::steady_clock::now();
  for (const VideoSequence& video : index.videos) {
    fs::create_directories(fs::path(out_root) / video.video_id);
    for (int t = 0; t < static_cast<int>(video.frames.size()); ++t) {
      FrameInferRecord rec;
      rec.video_id = video.video_id;
      rec.frame_index = video.frames[t].frame_index;
      std::string stem = fs::path(video.frames[t].image_path).stem().string();
      rec.output_path = (fs::path(out_root) / video.video_id / (stem + ".png")).string();
      auto t0 = std::chrono::steady_clock::now();
      try {
        Tensor map = infer_frame(model, video, t, dc, window);
        save_map_png(rec.output_path, map);
        rec.ok = true;
      } catch (const Error& e) {
        rec.ok = false;
        rec.error = e.what();
        ++report.failures;
      }
      auto t1 = std::chrono::steady_clock::now();
      rec.millis = std::chrono::duration<double, std::milli>(t1 - t0).count();
      report.frames.push_back(rec);
    }
  }
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  std::ofstream mf(fs::path(out_root) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest under " + out_root);
  mf << infer_report_to_json(report, window).dump(2) << '\n';
  return report;
}

}  // namespace umbra
