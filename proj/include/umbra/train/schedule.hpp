#pragma once

// Learning-rate schedule: linear warmup from a fractional start factor up
// to the peak rate, then cosine decay that reaches exactly zero on the
// final step. The factor multiplies every group's base rate, so relative
// group ratios are preserved throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "umbra/core/error.hpp"

namespace umbra {

/// Number of optimizer steps in one epoch: ceil(frames / batch_size).
inline std::int64_t steps_per_epoch(std::int64_t frames, std::int64_t batch_size) {
  if (frames <= 0) throw ConfigError("steps_per_epoch: no frames");
  if (batch_size <= 0) throw ConfigError("steps_per_epoch: batch size must be positive");
  return (frames + batch_size - 1) / batch_size;
}

/// Multiplier on the base learning rate at `step` (0-based) out of
/// `total_steps`. Warmup is clamped so at least the last step belongs to
/// the decay phase, which pins the final step's factor at zero.
inline double lr_factor(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                        double start_factor) {
  if (total_steps <= 0) throw ConfigError("lr_factor: total_steps must be positive");
  if (step < 0 || step >= total_steps)
    throw ConfigError("lr_factor: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + ")");
  if (warmup_steps < 0) throw ConfigError("lr_factor: negative warmup");
  if (start_factor < 0.0 || start_factor > 1.0)
    throw ConfigError("lr_factor: start factor must lie in [0, 1]");
  std::int64_t w = std::min(warmup_steps, total_steps - 1);
  if (step < w)
    return start_factor + (1.0 - start_factor) * static_cast<double>(step) / static_cast<double>(w);
  if (step >= total_steps - 1) return 0.0;
  double progress =
      static_cast<double>(step - w) / static_cast<double>(total_steps - 1 - w);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace umbra
