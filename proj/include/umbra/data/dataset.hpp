#pragma once

// Dataset indexing, frame loading, triple sampling, and integrity checks
// for the on-disk layout
//   <root>/<split>/images/<video_id>/<frame>.jpg
//   <root>/<split>/labels/<video_id>/<frame>.png
// Temporal order within a video is lexicographic filename order, so frame
// numbers must be zero-padded.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "umbra/core/init.hpp"
#include "umbra/data/image.hpp"

namespace umbra {

namespace fs = std::filesystem;

struct FrameRecord {
  std::string video_id;
  int frame_index = 0;  // position in temporal order
  std::string image_path;
  std::string mask_path;
};

struct VideoSequence {
  std::string video_id;
  std::vector<FrameRecord> frames;
};

struct DatasetIndex {
  std::string root;
  std::string split;
  std::vector<VideoSequence> videos;

  std::int64_t frame_count() const {
    std::int64_t n = 0;
    for (const auto& v : videos) n += static_cast<std::int64_t>(v.frames.size());
    return n;
  }
};

struct TripleSample {
  FrameRecord a1, a2, b;
  Tensor img_a1, img_a2, img_b;     // (3,S,S) normalized
  Tensor mask_a1, mask_a2, mask_b;  // (S,S) in {0,1}
};

/// Scans the split directories and pairs every image with its mask.
inline DatasetIndex index_dataset(const std::string& root, const std::string& split) {
  fs::path images = fs::path(root) / split / "images";
  fs::path labels = fs::path(root) / split / "labels";
  if (!fs::is_directory(images))
    throw DataError("missing images directory: " + images.string());
  if (!fs::is_directory(labels))
    throw DataError("missing labels directory: " + labels.string());

  DatasetIndex index{root, split, {}};
  std::vector<std::string> video_ids;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_directory()) video_ids.push_back(e.path().filename().string());
  std::sort(video_ids.begin(), video_ids.end());

  for (const std::string& vid : video_ids) {
    fs::path vdir = images / vid;
    fs::path ldir = labels / vid;
    if (!fs::is_directory(ldir))
      throw DataError("video '" + vid + "' has no labels directory: " + ldir.string());

    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(vdir))
      if (e.is_regular_file()) stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());

    // Masks without a matching image are as much a pairing error as the
    // reverse, so collect label stems too.
    std::vector<std::string> label_stems;
    for (const auto& e : fs::directory_iterator(ldir))
      if (e.is_regular_file()) label_stems.push_back(e.path().stem().string());
    std::sort(label_stems.begin(), label_stems.end());
    for (const std::string& ls : label_stems)
      if (!std::binary_search(stems.begin(), stems.end(), ls))
        throw DataError("mask without image: " + (ldir / (ls + ".png")).string());

    VideoSequence seq{vid, {}};
    int idx = 0;
    for (const std::string& stem : stems) {
      fs::path mask = ldir / (stem + ".png");
      if (!fs::is_regular_file(mask))
        throw DataError("image without mask: expected " + mask.string());
      // Recover the actual image filename (extension not fixed to .jpg).
      fs::path img;
      for (const auto& e : fs::directory_iterator(vdir))
        if (e.is_regular_file() && e.path().stem().string() == stem) {
          img = e.path();
          break;
        }
      seq.frames.push_back({vid, idx++, img.string(), mask.string()});
    }
    if (seq.frames.size() < 2)
      throw DataError("video '" + vid + "' has fewer than 2 frames");
    index.videos.push_back(std::move(seq));
  }
  if (index.videos.empty()) throw DataError("no videos found under " + images.string());
  return index;
}

/// Loads one frame: image resized to size x size, scaled to [0,1], then
/// mean/std-normalized; mask nearest-neighbor resized and binarized at 128.
inline std::pair<Tensor, Tensor> load_frame(const FrameRecord& rec, int size,
                                            const std::vector<double>& mean,
                                            const std::vector<double>& stddev) {
  Tensor img = load_image(rec.image_path);
  Tensor mask = load_mask_raw(rec.mask_path);
  if (img.dim(1) != mask.dim(0) || img.dim(2) != mask.dim(1))
    throw DataError("image/mask dimension mismatch for " + rec.image_path);
  img = resize_image_bilinear(img, size);
  normalize_image(img, mean, stddev);
  Tensor m = binarize_mask(resize_mask_nearest(mask, size));
  return {std::move(img), std::move(m)};
}

struct TripleRefs {
  FrameRecord a1, a2, b;
};

/// Draws the frame identities of one training triple: two frames of one
/// uniformly chosen video at a uniform temporal offset in
/// [1, min(max_offset, len-1)], plus one uniform frame of a different video.
inline TripleRefs sample_triple_refs(const DatasetIndex& index, Rng& rng, int max_offset) {
  int nv = static_cast<int>(index.videos.size());
  if (nv < 2) throw DataError("triple sampling needs at least 2 videos, have " + std::to_string(nv));
  int va = rng.uniform_int(0, nv - 1);
  const VideoSequence& a = index.videos[va];
  int len = static_cast<int>(a.frames.size());
  int d = rng.uniform_int(1, std::min(max_offset, len - 1));
  int i = rng.uniform_int(0, len - 1 - d);
  int r = rng.uniform_int(0, nv - 2);
  int vb = r >= va ? r + 1 : r;
  const VideoSequence& b = index.videos[vb];
  int j = rng.uniform_int(0, static_cast<int>(b.frames.size()) - 1);
  return {a.frames[i], a.frames[i + d], b.frames[j]};
}

inline TripleSample sample_triple(const DatasetIndex& index, Rng& rng, int max_offset, int size,
                                  const std::vector<double>& mean,
                                  const std::vector<double>& stddev) {
  TripleRefs r = sample_triple_refs(index, rng, max_offset);
  TripleSample s;
  s.a1 = r.a1;
  s.a2 = r.a2;
  s.b = r.b;
  auto [i1, m1] = load_frame(r.a1, size, mean, stddev);
  auto [i2, m2] = load_frame(r.a2, size, mean, stddev);
  auto [ib, mb] = load_frame(r.b, size, mean, stddev);
  s.img_a1 = std::move(i1);
  s.mask_a1 = std::move(m1);
  s.img_a2 = std::move(i2);
  s.mask_a2 = std::move(m2);
  s.img_b = std::move(ib);
  s.mask_b = std::move(mb);
  return s;
}

struct ValidationReport {
  int videos = 0;
  std::int64_t frames = 0;
  int min_len = 0;
  int max_len = 0;
  std::vector<std::string> binarity_warnings;   // masks holding values other than {0,255}
  std::vector<std::string> dimension_warnings;  // image/mask size mismatches
  std::vector<std::string> stat_warnings;       // deviations from the published corpus stats
};

/// Report-only integrity pass: counts, length extremes, mask binarity and
/// image/mask dimension agreement. When the split size matches the published
/// corpus (50 train / 70 test videos), length extremes outside the published
/// 11..103 envelope are flagged as warnings.
inline ValidationReport validate_dataset(const DatasetIndex& index) {
  ValidationReport rep;
  rep.videos = static_cast<int>(index.videos.size());
  rep.frames = index.frame_count();
  for (const auto& v : index.videos) {
    int len = static_cast<int>(v.frames.size());
    if (rep.min_len == 0 || len < rep.min_len) rep.min_len = len;
    rep.max_len = std::max(rep.max_len, len);
    for (const auto& f : v.frames) {
      Tensor mask = load_mask_raw(f.mask_path);
      bool binary = true;
      for (std::int64_t i = 0; i < mask.size() && binary; ++i)
        if (mask[i] != 0.0 && mask[i] != 255.0) binary = false;
      if (!binary) rep.binarity_warnings.push_back(f.mask_path);
      cv::Mat img = cv::imread(f.image_path, cv::IMREAD_COLOR);
      if (img.empty() || img.rows != mask.dim(0) || img.cols != mask.dim(1))
        rep.dimension_warnings.push_back(f.image_path);
    }
  }
  if (rep.videos == 50 || rep.videos == 70) {
    if (rep.min_len < 11)
      rep.stat_warnings.push_back("shortest video has " + std::to_string(rep.min_len) +
                                  " frames; published corpus minimum is 11");
    if (rep.max_len > 103)
      rep.stat_warnings.push_back("longest video has " + std::to_string(rep.max_len) +
                                  " frames; published corpus maximum is 103");
  }
  return rep;
}

inline nlohmann::json report_to_json(const ValidationReport& r) {
  return {{"videos", r.videos},
          {"frames", r.frames},
          {"min_video_length", r.min_len},
          {"max_video_length", r.max_len},
          {"binarity_warnings", r.binarity_warnings},
          {"dimension_warnings", r.dimension_warnings},
          {"stat_warnings", r.stat_warnings}};
}

inline std::string report_to_text(const ValidationReport& r) {
  std::string s;
  s += "videos:            " + std::to_string(r.videos) + "\n";
  s += "frames:            " + std::to_string(r.frames) + "\n";
  s += "min video length:  " + std::to_string(r.min_len) + "\n";
  s += "max video length:  " + std::to_string(r.max_len) + "\n";
  auto section = [&s](const char* title, const std::vector<std::string>& items) {
    s += std::string(title) + " (" + std::to_string(items.size()) + ")\n";
    for (const auto& it : items) s += "  - " + it + "\n";
  };
  section("binarity warnings", r.binarity_warnings);
  section("dimension warnings", r.dimension_warnings);
  section("stat warnings", r.stat_warnings);
  return s;
}

}  // namespace umbra
