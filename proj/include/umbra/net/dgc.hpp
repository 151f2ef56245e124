#pragma once

// Dual gated co-attention between two same-video feature maps:
//   affinity      A = Ê1 M Ê2ᵀ over flattened spatial positions
//   co-attention  H1 = unflatten(Softmax(A) Ê2), H2 = unflatten(Softmax(Aᵀ) Ê1)
//   fusion        Q = Conv3x3(Concat(H1, H2))
//   gates         K_i = σ(Conv1x1_i(Q)) spatial, U_i = σ(fc_i(GAP(Q))) channel
//   refinement    C_i = Conv3x3(Concat(E_i, H_i ⊙ K_i ⊙ U_i))
// Each side's gates have their own parameters; the refinement conv is
// shared between sides by default (configurable).

#include <utility>

#include "umbra/net/blocks.hpp"

namespace umbra {

struct DgcParams {
  ag::Var M;        // (C,C) affinity weight
  Conv fuse;        // 3x3: 2C -> C
  Conv k1, k2;      // 1x1: C -> 1 spatial gates
  Linear u1, u2;    // C -> C channel gates
  Conv refine1, refine2;  // 3x3: 2C -> C
  int channels = 0;
};

inline DgcParams make_dgc(ParamSet& ps, Rng& rng, int channels, bool share_refine) {
  DgcParams p;
  p.channels = channels;
  p.M = ps.add("dgc.M", init_symmetric_weight(rng, channels));
  p.fuse = make_conv(ps, "dgc.fuse", rng, 2 * channels, channels, 3);
  p.k1 = make_conv(ps, "dgc.k1", rng, channels, 1, 1);
  p.k2 = make_conv(ps, "dgc.k2", rng, channels, 1, 1);
  p.u1 = make_linear(ps, "dgc.u1", rng, channels, channels);
  p.u2 = make_linear(ps, "dgc.u2", rng, channels, channels);
  p.refine1 = make_conv(ps, "dgc.refine1", rng, 2 * channels, channels, 3);
  p.refine2 = share_refine ? p.refine1 : make_conv(ps, "dgc.refine2", rng, 2 * channels, channels, 3);
  return p;
}

/// (C,H,W) -> (WH,C) matrix whose rows are flattened spatial positions.
inline ag::Var flatten_positions(const ag::Var& e) {
  int c = e->value.dim(0), h = e->value.dim(1), w = e->value.dim(2);
  return ag::transpose(ag::reshape(e, {c, h * w}));
}

inline ag::Var unflatten_positions(const ag::Var& m, int c, int h, int w) {
  return ag::reshape(ag::transpose(m), {c, h, w});
}

/// A[i,j] = Ê1[i,:] · M · Ê2[j,:] over flattened positions.
inline ag::Var affinity(const ag::Var& e1, const ag::Var& e2, const ag::Var& m) {
  if (!e1->value.same_shape(e2->value))
    throw ShapeError("affinity: feature shapes differ: " + shape_str(e1->value.shape()) +
                     " vs " + shape_str(e2->value.shape()));
  if (m->value.rank() != 2 || m->value.dim(0) != e1->value.dim(0) ||
      m->value.dim(1) != e1->value.dim(0))
    throw ShapeError("affinity: weight must be (C,C) with C=" + std::to_string(e1->value.dim(0)));
  ag::Var f1 = flatten_positions(e1);
  ag::Var f2 = flatten_positions(e2);
  return ag::matmul(ag::matmul(f1, m), ag::transpose(f2));
}

/// Row-normalized cross-attention both ways; every output cell is a convex
/// combination of the partner frame's cells. `a_t` holds the transposed
/// affinity (callers may supply it as the re-derived product Ê2 Mᵀ Ê1ᵀ so
/// mirrored inputs replay bit-identical arithmetic).
inline std::pair<ag::Var, ag::Var> coattend(const ag::Var& a, const ag::Var& a_t,
                                            const ag::Var& e1, const ag::Var& e2) {
  if (!a->value.all_finite() || !a_t->value.all_finite())
    throw NumericError("coattend: non-finite affinity matrix");
  int c = e1->value.dim(0), h = e1->value.dim(1), w = e1->value.dim(2);
  ag::Var h1 = unflatten_positions(ag::matmul(ag::softmax_rows(a), flatten_positions(e2)), c, h, w);
  ag::Var h2 =
      unflatten_positions(ag::matmul(ag::softmax_rows(a_t), flatten_positions(e1)), c, h, w);
  return {h1, h2};
}

inline std::pair<ag::Var, ag::Var> coattend(const ag::Var& a, const ag::Var& e1,
                                            const ag::Var& e2) {
  return coattend(a, ag::transpose(a), e1, e2);
}

inline ag::Var fuse(const ag::Var& h1, const ag::Var& h2, const Conv& conv) {
  if (!h1->value.same_shape(h2->value))
    throw ShapeError("fuse: shapes differ: " + shape_str(h1->value.shape()) + " vs " +
                     shape_str(h2->value.shape()));
  return conv(ag::concat_ch(h1, h2));
}

struct GateMaps {
  ag::Var spatial;  // (1,H,W) in (0,1)
  ag::Var channel;  // (C) in (0,1)
};

inline std::pair<GateMaps, GateMaps> gates(const ag::Var& q, const DgcParams& p) {
  ag::Var pooled = ag::global_avg_pool(q);
  GateMaps g1{ag::sigmoid(p.k1(q)), ag::sigmoid(p.u1(pooled))};
  GateMaps g2{ag::sigmoid(p.k2(q)), ag::sigmoid(p.u2(pooled))};
  return {g1, g2};
}

/// C = Conv3x3(Concat(E, H ⊙ K ⊙ U)); K broadcasts over channels, U over space.
inline ag::Var refine(const ag::Var& e, const ag::Var& h, const ag::Var& k_spatial,
                      const ag::Var& u_channel, const Conv& conv) {
  int c = e->value.dim(0), hh = e->value.dim(1), ww = e->value.dim(2);
  ag::Var gated = ag::mul(h, ag::bcast_to(k_spatial, {c, hh, ww}));
  gated = ag::mul(gated, ag::bcast_to(ag::reshape(u_channel, {c, 1, 1}), {c, hh, ww}));
  return conv(ag::concat_ch(e, gated));
}

/// Full module; `coattention`/`dual_gate` mirror the ablation flags.
/// With co-attention off the inputs pass through untouched; with the gate
/// path off the refinement sees the raw co-attention features.
inline std::pair<ag::Var, ag::Var> dgc_forward(const ag::Var& e1, const ag::Var& e2,
                                               const DgcParams& p, bool coattention = true,
                                               bool dual_gate = true) {
  if (!coattention) return {e1, e2};
  ag::Var a = affinity(e1, e2, p.M);
  // The transposed affinity is re-derived as Ê2 Mᵀ Ê1ᵀ (= Aᵀ): when the two
  // frames and the per-side parameters coincide, both sides then run the
  // same floating-point program and the refined outputs match bitwise.
  ag::Var a_mirror = affinity(e2, e1, ag::transpose(p.M));
  auto [h1, h2] = coattend(a, a_mirror, e1, e2);
  if (!dual_gate) {
    return {refine(e1, h1, ag::constant(Tensor::ones({1, e1->value.dim(1), e1->value.dim(2)})),
                   ag::constant(Tensor::ones({p.channels})), p.refine1),
            refine(e2, h2, ag::constant(Tensor::ones({1, e2->value.dim(1), e2->value.dim(2)})),
                   ag::constant(Tensor::ones({p.channels})), p.refine2)};
  }
  ag::Var q = fuse(h1, h2, p.fuse);
  auto [g1, g2] = gates(q, p);
  return {refine(e1, h1, g1.spatial, g1.channel, p.refine1),
          refine(e2, h2, g2.spatial, g2.channel, p.refine2)};
}

}  // namespace umbra
