#pragma once

// Segmentation objective per branch: pixel-mean binary cross-entropy from
// logits plus the lovász hinge, a convex surrogate whose value tracks the
// intersection-over-union of the hard prediction. Total objective sums the
// three branch losses and adds the weighted similarity-contrast term.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "umbra/core/graph.hpp"
#include "umbra/core/ops.hpp"

namespace umbra {

inline void check_loss_pair(const ag::Var& logits, const Tensor& target, const char* who) {
  if (!logits->value.same_shape(target))
    throw ShapeError(std::string(who) + ": logits " + shape_str(logits->value.shape()) +
                     " vs target " + shape_str(target.shape()));
}

/// Numerically stable mean BCE-with-logits:
///   l(f,g) = max(f,0) - f*g + log(1 + exp(-|f|)),  d/df = (sigmoid(f) - g)/n.
inline ag::Var bce_loss(const ag::Var& logits, const Tensor& target) {
  check_loss_pair(logits, target, "bce_loss");
  const std::size_t n = logits->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = logits->value[i], g = target[i];
    acc += std::max(f, 0.0) - f * g + std::log1p(std::exp(-std::abs(f)));
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  Tensor tgt = target;
  return ag::make_op(std::move(out), {logits}, [tgt, n](ag::Node& node) {
    double up = node.grad[0];
    ag::Var& in = node.parents[0];
    if (!in->requires_grad) return;
    Tensor& g = in->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      g[i] += up * (ag::sigmoid_scalar(in->value[i]) - tgt[i]) / static_cast<double>(n);
  });
}

namespace detail {

/// Jaccard-extension weights for hinge errors already sorted descending.
/// w[k] = J(k) - J(k-1) where J(k) = 1 - I_k/U_k on the first k sorted
/// ground-truth values.
inline std::vector<double> lovasz_grad_weights(const std::vector<double>& gt_sorted) {
  const std::size_t n = gt_sorted.size();
  double gts = std::accumulate(gt_sorted.begin(), gt_sorted.end(), 0.0);
  std::vector<double> w(n);
  double cum_gt = 0.0, cum_not = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    cum_gt += gt_sorted[k];
    cum_not += 1.0 - gt_sorted[k];
    double inter = gts - cum_gt;
    double uni = gts + cum_not;
    double jacc = 1.0 - inter / uni;  // uni >= 1 whenever n >= 1
    w[k] = jacc - prev;
    prev = jacc;
  }
  return w;
}

}  // namespace detail

/// Lovász hinge over one image. Targets must be exactly 0 or 1.
/// Signs y = 2g - 1, hinge m_i = max(0, 1 - f_i*y_i); errors are sorted
/// descending and weighted by the Jaccard-extension increments, so the
/// worst-ranked pixels dominate. Subgradient: -y_i * w[rank(i)] where the
/// hinge is active, else 0.
inline ag::Var lovasz_hinge(const ag::Var& logits, const Tensor& target) {
  check_loss_pair(logits, target, "lovasz_hinge");
  const std::size_t n = logits->value.size();
  std::vector<double> sign(n), err(n);
  for (std::size_t i = 0; i < n; ++i) {
    double g = target[i];
    if (g != 0.0 && g != 1.0)
      throw DataError("lovasz_hinge: target values must be binary, got " + std::to_string(g));
    sign[i] = 2.0 * g - 1.0;
    err[i] = std::max(0.0, 1.0 - logits->value[i] * sign[i]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&err](std::size_t a, std::size_t b) { return err[a] > err[b]; });
  std::vector<double> gt_sorted(n);
  for (std::size_t k = 0; k < n; ++k) gt_sorted[k] = target[order[k]];
  std::vector<double> w = detail::lovasz_grad_weights(gt_sorted);
  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) loss += err[order[k]] * w[k];
  return ag::make_op(Tensor::scalar(loss), {logits},
                     [sign, err, order, w, n](ag::Node& node) {
                       double up = node.grad[0];
                       ag::Var& in = node.parents[0];
                       if (!in->requires_grad) return;
                       Tensor& g = in->ensure_grad();
                       for (std::size_t k = 0; k < n; ++k) {
                         std::size_t i = order[k];
                         if (err[i] > 0.0) g[i] += up * -sign[i] * w[k];
                       }
                     });
}

/// Per-branch segmentation loss: mean BCE plus lovász hinge.
inline ag::Var branch_loss(const ag::Var& logits, const Tensor& target) {
  return ag::add(bce_loss(logits, target), lovasz_hinge(logits, target));
}

struct LossBreakdown {
  ag::Var seg_a1, seg_a2, seg_b;  // per-branch segmentation terms
  ag::Var seg;                    // their sum
  ag::Var aux;                    // similarity-contrast term (zero when disabled)
  ag::Var total;                  // seg + beta * aux
};

/// Combines the three branch losses with the auxiliary term. Pass a null
/// aux Var to disable the auxiliary path (total reduces to seg).
inline LossBreakdown total_loss(const ag::Var& logits_a1, const Tensor& mask_a1,
                                const ag::Var& logits_a2, const Tensor& mask_a2,
                                const ag::Var& logits_b, const Tensor& mask_b,
                                const ag::Var& aux, double beta) {
  LossBreakdown out;
  out.seg_a1 = branch_loss(logits_a1, mask_a1);
  out.seg_a2 = branch_loss(logits_a2, mask_a2);
  out.seg_b = branch_loss(logits_b, mask_b);
  out.seg = ag::add(ag::add(out.seg_a1, out.seg_a2), out.seg_b);
  out.aux = aux ? aux : ag::constant(Tensor::scalar(0.0));
  out.total = aux ? ag::add(out.seg, ag::scale(out.aux, beta)) : out.seg;
  return out;
}

}  // namespace umbra
