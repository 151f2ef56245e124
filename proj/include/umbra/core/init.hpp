#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "umbra/core/tensor.hpp"

namespace umbra {

/// Seeded generator used for parameter init, data sampling and the
/// synthetic renderer. State round-trips through strings for checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  /// Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw Error("invalid rng state string");
  }

 private:
  std::mt19937_64 gen_;
};

/// Uniform fan-in init for convolution kernels shaped (out, in, kh, kw).
inline Tensor init_conv_weight(Rng& rng, Shape shape) {
  int fan_in = shape[1] * shape[2] * shape[3];
  double bound = std::sqrt(6.0 / fan_in);
  Tensor w(std::move(shape));
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

/// Uniform fan-in init for dense weights shaped (out, in).
inline Tensor init_linear_weight(Rng& rng, Shape shape) {
  double bound = std::sqrt(6.0 / shape[1]);
  Tensor w(std::move(shape));
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

/// Symmetric fan-scaled init for a square bilinear-form weight: draws R
/// uniformly and returns (R + R^T)/2, so a freshly initialised matrix is
/// exactly symmetric.
inline Tensor init_symmetric_weight(Rng& rng, int n) {
  double bound = std::sqrt(3.0 / n);
  Tensor r({n, n});
  for (std::int64_t i = 0; i < r.size(); ++i) r[i] = rng.uniform(-bound, bound);
  Tensor m({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.at(i, j) = 0.5 * (r.at(i, j) + r.at(j, i));
  return m;
}

}  // namespace umbra
