#pragma once

// Similarity-contrast auxiliary objective: embeddings of two frames from the
// same video should agree more than either does with a frame from a
// different video. Each feature map is average-pooled and L2-normalized;
// the loss penalizes cross-video similarity exceeding same-video similarity.

#include <utility>

#include "umbra/core/graph.hpp"
#include "umbra/core/ops.hpp"

namespace umbra {

/// GAP over space then L2-normalize: (C,H,W) -> unit-norm (C).
inline ag::Var pool_normalize(const ag::Var& feat, double eps = 1e-12) {
  if (feat->value.rank() != 3)
    throw ShapeError("pool_normalize: want rank-3 feature map, got " +
                     shape_str(feat->value.shape()));
  return ag::l2_normalize(ag::global_avg_pool(feat), eps);
}

struct Similarities {
  ag::Var same;   // cos(a1, a2)
  ag::Var cross;  // cos(a1, b)
};

inline Similarities similarities(const ag::Var& n_a1, const ag::Var& n_a2, const ag::Var& n_b) {
  if (n_a1->value.size() != n_a2->value.size() || n_a1->value.size() != n_b->value.size())
    throw ShapeError("similarities: descriptor lengths differ");
  Similarities s;
  s.same = ag::dot(n_a1, n_a2);
  s.cross = ag::dot(n_a1, n_b);
  return s;
}

/// softplus((cross - same) / tau); smooth, positive, monotone in the gap.
inline ag::Var aux_loss(const ag::Var& same, const ag::Var& cross, double tau) {
  if (tau <= 0.0) throw ConfigError("aux_loss: tau must be positive, got " + std::to_string(tau));
  return ag::softplus(ag::scale(ag::sub(cross, same), 1.0 / tau));
}

/// Full path from three deep feature maps to the scalar auxiliary loss.
inline ag::Var similarity_contrast_loss(const ag::Var& f_a1, const ag::Var& f_a2,
                                       const ag::Var& f_b, double tau, double eps = 1e-12) {
  ag::Var n1 = pool_normalize(f_a1, eps);
  ag::Var n2 = pool_normalize(f_a2, eps);
  ag::Var nb = pool_normalize(f_b, eps);
  Similarities s = similarities(n1, n2, nb);
  return aux_loss(s.same, s.cross, tau);
}

}  // namespace umbra
