#pragma once

// Image / mask file handling. OpenCV is used strictly for byte-level
// decode/encode; all resampling is done by our own kernels so the
// conventions under test are the ones the network actually uses.

#include <opencv2/imgcodecs.hpp>
#include <opencv2/core.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "umbra/core/ops.hpp"
#include "umbra/core/tensor.hpp"

namespace umbra {

/// Decodes an image file to (3,H,W) RGB doubles in [0,1].
inline Tensor load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read image: " + path);
  Tensor t({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = row[x][2 - c] / 255.0;  // BGR -> RGB
  }
  return t;
}

/// Decodes a mask file to (H,W) doubles holding the raw 8-bit values 0..255.
inline Tensor load_mask_raw(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read mask: " + path);
  Tensor t({m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) t.at(y, x) = static_cast<double>(row[x]);
  }
  return t;
}

/// Bilinear image resize (half-pixel centers), shared with the network's
/// feature resampling so there is exactly one convention in the codebase.
inline Tensor resize_image_bilinear(const Tensor& img, int size) {
  ag::NoGradGuard ng;
  return ag::bilinear_resize(ag::constant(img), size, size)->value;
}

/// Nearest-neighbor mask resize: source index = floor((dst+0.5)*in/out).
inline Tensor resize_mask_nearest(const Tensor& m, int size) {
  if (m.rank() != 2) throw ShapeError("resize_mask_nearest: expected rank-2 mask");
  int H = m.dim(0), W = m.dim(1);
  Tensor out({size, size});
  double sy = static_cast<double>(H) / size, sx = static_cast<double>(W) / size;
  for (int y = 0; y < size; ++y) {
    int iy = std::min(static_cast<int>((y + 0.5) * sy), H - 1);
    for (int x = 0; x < size; ++x) {
      int ix = std::min(static_cast<int>((x + 0.5) * sx), W - 1);
      out.at(y, x) = m.at(iy, ix);
    }
  }
  return out;
}

/// 8-bit values -> {0,1} with the >= threshold rule (default 128).
inline Tensor binarize_mask(const Tensor& raw, double threshold = 128.0) {
  Tensor out(raw.shape());
  for (std::int64_t i = 0; i < raw.size(); ++i) out[i] = raw[i] >= threshold ? 1.0 : 0.0;
  return out;
}

/// Channel-wise (v - mean) / std, in place.
inline void normalize_image(Tensor& img, const std::vector<double>& mean,
                            const std::vector<double>& stddev) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("normalize_image: expected (3,H,W)");
  std::int64_t hw = static_cast<std::int64_t>(img.dim(1)) * img.dim(2);
  for (int c = 0; c < 3; ++c) {
    double m = mean[c], s = stddev[c];
    double* p = img.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
  }
}

/// Writes a probability map in [0,1] as an 8-bit grayscale PNG.
inline void save_map_png(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("save_map_png: expected rank-2 map");
  cv::Mat m(map.dim(0), map.dim(1), CV_8UC1);
  for (int y = 0; y < map.dim(0); ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < map.dim(1); ++x) {
      double v = std::clamp(map.at(y, x), 0.0, 1.0);
      row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  if (!cv::imwrite(path, m)) throw IoError("cannot write mask: " + path);
}

/// Writes an RGB image in [0,1] as JPEG (quality pinned for reproducible bytes).
inline void save_image_jpg(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("save_image_jpg: expected (3,H,W)");
  cv::Mat m(img.dim(1), img.dim(2), CV_8UC3);
  for (int y = 0; y < img.dim(1); ++y) {
    cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.dim(2); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  }
  if (!cv::imwrite(path, m, {cv::IMWRITE_JPEG_QUALITY, 95}))
    throw IoError("cannot write image: " + path);
}

}  // namespace umbra
