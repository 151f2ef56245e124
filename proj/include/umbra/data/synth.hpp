#pragma once

// Synthetic fixture generator: textured backgrounds, a moving dark region
// whose darkness is multiplicative (texture survives — the "shadow"), and a
// flat-dark moving distractor object that must NOT be labeled. Shapes are
// rasterized exactly at pixel centers and all parameters are recorded in a
// manifest so tests can recount mask pixels analytically.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "umbra/core/init.hpp"
#include "umbra/data/image.hpp"

namespace umbra {

struct SynthSpec {
  int n_videos = 2;
  int frames_per_video = 8;
  int size = 64;
  std::uint64_t seed = 1;
  std::string split = "train";
};

namespace synth_detail {

struct Ellipse {
  double cx, cy, ra, rb;
  bool contains(double x, double y) const {
    double dx = (x - cx) / ra, dy = (y - cy) / rb;
    return dx * dx + dy * dy <= 1.0;
  }
};

/// Parallelogram center +/- alpha*u +/- beta*v; always convex, membership is
/// an exact 2x2 solve.
struct Parallelogram {
  double cx, cy, ux, uy, vx, vy;
  bool contains(double x, double y) const {
    double det = ux * vy - uy * vx;
    double px = x - cx, py = y - cy;
    double alpha = (px * vy - py * vx) / det;
    double beta = (py * ux - px * uy) / det;
    return std::abs(alpha) <= 1.0 && std::abs(beta) <= 1.0;
  }
};

struct Disk {
  double cx, cy, r;
  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    return dx * dx + dy * dy <= r * r;
  }
};

}  // namespace synth_detail

/// Renders the fixture dataset under `root` in the standard layout and
/// writes `synth_manifest.json` beside it. Deterministic per seed.
inline nlohmann::json generate_synthetic(const std::string& root, const SynthSpec& spec) {
  using namespace synth_detail;
  namespace fs = std::filesystem;
  if (spec.n_videos < 2) throw DataError("synthetic generator needs n_videos >= 2");
  if (spec.frames_per_video < 2) throw DataError("synthetic generator needs frames_per_video >= 2");
  if (spec.size < 16) throw DataError("synthetic generator needs size >= 16");

  Rng rng(spec.seed);
  const int S = spec.size;
  const int F = spec.frames_per_video;
  nlohmann::json manifest = {{"seed", spec.seed},
                             {"size", S},
                             {"split", spec.split},
                             {"shadow_factor", 0.45},
                             {"videos", nlohmann::json::array()}};

  std::error_code ec;
  for (int v = 0; v < spec.n_videos; ++v) {
    char vname[32];
    std::snprintf(vname, sizeof(vname), "video_%02d", v);
    fs::path img_dir = fs::path(root) / spec.split / "images" / vname;
    fs::path lbl_dir = fs::path(root) / spec.split / "labels" / vname;
    fs::create_directories(img_dir, ec);
    fs::create_directories(lbl_dir, ec);
    if (!fs::is_directory(img_dir) || !fs::is_directory(lbl_dir))
      throw IoError("cannot create output directories under " + root);

    // Static textured background for the whole video.
    double fx = rng.uniform(1.5, 4.0), fy = rng.uniform(1.5, 4.0);
    double px = rng.uniform(0.0, 6.28), py = rng.uniform(0.0, 6.28);
    double tint[3] = {rng.uniform(0.92, 1.0), rng.uniform(0.92, 1.0), rng.uniform(0.92, 1.0)};
    Tensor noise({3, S, S});
    for (std::int64_t i = 0; i < noise.size(); ++i) noise[i] = rng.uniform(-0.04, 0.04);
    Tensor background({3, S, S});
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double base = 0.70 + 0.10 * std::sin(2.0 * M_PI * fx * x / S + px) +
                      0.08 * std::sin(2.0 * M_PI * fy * y / S + py);
        for (int c = 0; c < 3; ++c)
          background.at(c, y, x) = std::clamp(base * tint[c] + noise.at(c, y, x), 0.0, 1.0);
      }

    // Shadow region path (upper band) and distractor path (lower band)
    // never overlap, so the mask pixel count is the shape's exact count.
    bool use_ellipse = (v % 2 == 0);
    double cy_s = rng.uniform(0.22, 0.30) * S;
    double cx0 = rng.uniform(0.25, 0.35) * S, cx1 = rng.uniform(0.65, 0.75) * S;
    double ra = rng.uniform(0.14, 0.20) * S, rb = rng.uniform(0.10, 0.16) * S;
    double ux = rng.uniform(0.10, 0.16) * S, uy = rng.uniform(-0.03, 0.03) * S;
    double vx = rng.uniform(-0.03, 0.03) * S, vy = rng.uniform(0.08, 0.13) * S;
    double cy_d = rng.uniform(0.72, 0.78) * S;
    double rd = rng.uniform(0.08, 0.11) * S;
    double dist_color[3] = {rng.uniform(0.05, 0.10), rng.uniform(0.05, 0.10),
                            rng.uniform(0.05, 0.10)};

    nlohmann::json video = {{"id", vname},
                            {"shape", use_ellipse ? "ellipse" : "parallelogram"},
                            {"frames", nlohmann::json::array()}};
    for (int t = 0; t < F; ++t) {
      double prog = static_cast<double>(t) / (F - 1);
      double cx_s = cx0 + (cx1 - cx0) * prog;
      double cx_d = cx1 - (cx1 - cx0) * prog;
      Ellipse ell{cx_s, cy_s, ra, rb};
      Parallelogram para{cx_s, cy_s, ux, uy, vx, vy};
      Disk disk{cx_d, cy_d, rd};

      Tensor frame = background;
      Tensor mask({S, S});
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double pcx = x + 0.5, pcy = y + 0.5;
          bool shadow = use_ellipse ? ell.contains(pcx, pcy) : para.contains(pcx, pcy);
          if (shadow) {
            mask.at(y, x) = 1.0;
            for (int c = 0; c < 3; ++c) frame.at(c, y, x) *= 0.45;
          }
          if (disk.contains(pcx, pcy))
            for (int c = 0; c < 3; ++c) frame.at(c, y, x) = dist_color[c];
        }

      char fname[32];
      std::snprintf(fname, sizeof(fname), "frame_%03d", t);
      save_image_jpg((img_dir / (std::string(fname) + ".jpg")).string(), frame);
      save_map_png((lbl_dir / (std::string(fname) + ".png")).string(), mask);

      nlohmann::json fj = {{"t", t}, {"distractor", {{"cx", cx_d}, {"cy", cy_d}, {"r", rd}}}};
      if (use_ellipse)
        fj["ellipse"] = {{"cx", cx_s}, {"cy", cy_s}, {"ra", ra}, {"rb", rb}};
      else
        fj["parallelogram"] = {{"cx", cx_s}, {"cy", cy_s}, {"ux", ux},
                               {"uy", uy},   {"vx", vx},   {"vy", vy}};
      video["frames"].push_back(fj);
    }
    manifest["videos"].push_back(video);
  }

  std::ofstream out(fs::path(root) / "synth_manifest.json");
  if (!out) throw IoError("cannot write manifest under " + root);
  out << manifest.dump(2) << "\n";
  return manifest;
}

}  // namespace umbra
