#pragma once

// Differentiable tensor ops on the umbra::ag tape. Dense math is delegated
// to Eigen (row-major maps over Tensor storage); every op installs a closure
// that scatters gradients back to the parents that asked for them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "umbra/core/graph.hpp"
#include "umbra/core/tensor.hpp"

namespace umbra::ag {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

inline void accum(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  double* d = p->grad.data();
  const double* s = g.data();
  for (std::int64_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    accum(a, n.grad);
    accum(b, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("sub: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    accum(a, n.grad);
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("mul: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * s;
  });
}

// ---------------------------------------------------------------------------
// activations

inline Var relu(const Var& a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i)
      if (a->value[i] > 0.0) a->grad[i] += n.grad[i];
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a->value[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      double y = n.value[i];
      a->grad[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

/// log(1 + e^x) in the overflow-safe form max(x,0) + log1p(e^{-|x|}).
inline double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline Var softplus(const Var& a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = softplus_scalar(a->value[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i)
      a->grad[i] += n.grad[i] * sigmoid_scalar(a->value[i]);
  });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    double g = n.grad[0];
    for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  });
}

inline Var mean(const Var& a) {
  double s = 0.0;
  std::int64_t cnt = a->value.size();
  for (std::int64_t i = 0; i < cnt; ++i) s += a->value[i];
  return make_op(Tensor::scalar(s / cnt), {a}, [a, cnt](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    double g = n.grad[0] / cnt;
    for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  });
}

inline Var dot(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ShapeError("dot: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
  return make_op(Tensor::scalar(s), {a, b}, [a, b](Node& n) {
    double g = n.grad[0];
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::int64_t i = 0; i < b->grad.size(); ++i) b->grad[i] += g * a->value[i];
    }
  });
}

/// (C,H,W) -> (C): mean over the spatial extent of each channel.
inline Var global_avg_pool(const Var& a) {
  if (a->value.rank() != 3) throw ShapeError("global_avg_pool: expected rank-3 input");
  int C = a->value.dim(0), H = a->value.dim(1), W = a->value.dim(2);
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    const double* p = a->value.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) s += p[i];
    out[c] = s / hw;
  }
  return make_op(std::move(out), {a}, [a, C, hw](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int c = 0; c < C; ++c) {
      double g = n.grad[c] / hw;
      double* p = a->grad.data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a->value.size())
    throw ShapeError("reshape: cannot view " + shape_str(a->value.shape()) + " as " +
                     shape_str(shape));
  Tensor out(shape);
  std::copy(a->value.data(), a->value.data() + a->value.size(), out.data());
  return make_op(std::move(out), {a}, [a](Node& n) { accum(a, n.grad); });
}

/// Rank-2 transpose.
inline Var transpose(const Var& a) {
  if (a->value.rank() != 2) throw ShapeError("transpose: expected rank-2 input");
  int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({c, r});
  CMapM src(a->value.data(), r, c);
  MapM dst(out.data(), c, r);
  dst = src.transpose();
  return make_op(std::move(out), {a}, [a, r, c](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    CMapM g(n.grad.data(), c, r);
    MapM dst(a->grad.data(), r, c);
    dst += g.transpose();
  });
}

/// Replicates the input to `shape`; every dim must match or be 1 in the
/// input. Backward sums over the replicated dims.
inline Var bcast_to(const Var& a, Shape shape) {
  const Shape& in = a->value.shape();
  if (in.size() != shape.size())
    throw ShapeError("bcast_to: rank mismatch " + shape_str(in) + " vs " + shape_str(shape));
  for (std::size_t i = 0; i < in.size(); ++i)
    if (in[i] != shape[i] && in[i] != 1)
      throw ShapeError("bcast_to: cannot expand " + shape_str(in) + " to " + shape_str(shape));
  // Strides of the input, with zero stride on broadcast dims.
  std::vector<std::int64_t> stride(in.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    stride[i] = (in[i] == 1) ? 0 : acc;
    acc *= in[i];
  }
  Tensor out(shape);
  std::vector<int> idx(shape.size(), 0);
  for (std::int64_t o = 0; o < out.size(); ++o) {
    std::int64_t src = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) src += idx[d] * stride[d];
    out[o] = a->value[src];
    for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return make_op(std::move(out), {a}, [a, shape, stride](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    std::vector<int> idx(shape.size(), 0);
    for (std::int64_t o = 0; o < n.grad.size(); ++o) {
      std::int64_t src = 0;
      for (std::size_t d = 0; d < shape.size(); ++d) src += idx[d] * stride[d];
      a->grad[src] += n.grad[o];
      for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  });
}

/// Concatenates rank-3 maps along the channel axis.
inline Var concat_ch(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_ch: no inputs");
  int H = xs[0]->value.dim(1), W = xs[0]->value.dim(2);
  int C = 0;
  for (const Var& x : xs) {
    if (x->value.rank() != 3 || x->value.dim(1) != H || x->value.dim(2) != W)
      throw ShapeError("concat_ch: spatial mismatch at input of shape " +
                       shape_str(x->value.shape()));
    C += x->value.dim(0);
  }
  Tensor out({C, H, W});
  std::int64_t off = 0;
  for (const Var& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.size(), out.data() + off);
    off += x->value.size();
  }
  return make_op(std::move(out), xs, [xs](Node& n) {
    std::int64_t off = 0;
    for (const Var& x : xs) {
      if (x->requires_grad) {
        x->ensure_grad();
        const double* g = n.grad.data() + off;
        for (std::int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g[i];
      }
      off += x->value.size();
    }
  });
}

inline Var concat_ch(const Var& a, const Var& b) { return concat_ch(std::vector<Var>{a, b}); }

/// Edge-replicating spatial padding: (C,H,W) -> (C,H+2p,W+2p). Unlike zero
/// padding this keeps a spatially constant field constant after convolution.
inline Var pad_edge(const Var& x, int p) {
  if (x->value.rank() != 3) throw ShapeError("pad_edge: expected rank-3 input");
  if (p < 0) throw ShapeError("pad_edge: negative padding");
  if (p == 0) return x;
  int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  int OH = H + 2 * p, OW = W + 2 * p;
  Tensor out({C, OH, OW});
  for (int c = 0; c < C; ++c) {
    const double* src = x->value.data() + static_cast<std::int64_t>(c) * H * W;
    double* dst = out.data() + static_cast<std::int64_t>(c) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      int iy = std::clamp(oy - p, 0, H - 1);
      for (int ox = 0; ox < OW; ++ox) {
        int ix = std::clamp(ox - p, 0, W - 1);
        dst[static_cast<std::int64_t>(oy) * OW + ox] = src[static_cast<std::int64_t>(iy) * W + ix];
      }
    }
  }
  return make_op(std::move(out), {x}, [x, p, C, H, W, OH, OW](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int c = 0; c < C; ++c) {
      double* dst = x->grad.data() + static_cast<std::int64_t>(c) * H * W;
      const double* g = n.grad.data() + static_cast<std::int64_t>(c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        int iy = std::clamp(oy - p, 0, H - 1);
        for (int ox = 0; ox < OW; ++ox) {
          int ix = std::clamp(ox - p, 0, W - 1);
          dst[static_cast<std::int64_t>(iy) * W + ix] += g[static_cast<std::int64_t>(oy) * OW + ox];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dense linear algebra

inline Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2)
    throw ShapeError("matmul: expected rank-2 inputs");
  int m = a->value.dim(0), k = a->value.dim(1);
  int k2 = b->value.dim(0), n_ = b->value.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dim mismatch " + shape_str(a->value.shape()) + " x " +
                     shape_str(b->value.shape()));
  Tensor out({m, n_});
  CMapM A(a->value.data(), m, k);
  CMapM B(b->value.data(), k, n_);
  MapM O(out.data(), m, n_);
  O.noalias() = A * B;
  return make_op(std::move(out), {a, b}, [a, b, m, k, n_](Node& n) {
    CMapM G(n.grad.data(), m, n_);
    if (a->requires_grad) {
      a->ensure_grad();
      CMapM B(b->value.data(), k, n_);
      MapM dA(a->grad.data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      CMapM A(a->value.data(), m, k);
      MapM dB(b->grad.data(), k, n_);
      dB.noalias() += A.transpose() * G;
    }
  });
}

/// y = W x + b with x rank-1 (in), W (out,in), b (out) or empty Var.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->value.rank() != 1 || w->value.rank() != 2)
    throw ShapeError("linear: expected vector input and rank-2 weight");
  int out_n = w->value.dim(0), in_n = w->value.dim(1);
  if (x->value.dim(0) != in_n)
    throw ShapeError("linear: input size " + shape_str(x->value.shape()) +
                     " does not match weight " + shape_str(w->value.shape()));
  bool has_bias = static_cast<bool>(b);
  if (has_bias && (b->value.rank() != 1 || b->value.dim(0) != out_n))
    throw ShapeError("linear: bad bias shape " + shape_str(b->value.shape()));
  Tensor out({out_n});
  CMapM W(w->value.data(), out_n, in_n);
  Eigen::Map<const Eigen::VectorXd> X(x->value.data(), in_n);
  Eigen::Map<Eigen::VectorXd> Y(out.data(), out_n);
  Y.noalias() = W * X;
  if (has_bias)
    for (int i = 0; i < out_n; ++i) out[i] += b->value[i];
  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), std::move(parents), [x, w, b, out_n, in_n, has_bias](Node& n) {
    Eigen::Map<const Eigen::VectorXd> G(n.grad.data(), out_n);
    if (x->requires_grad) {
      x->ensure_grad();
      CMapM W(w->value.data(), out_n, in_n);
      Eigen::Map<Eigen::VectorXd> dX(x->grad.data(), in_n);
      dX.noalias() += W.transpose() * G;
    }
    if (w->requires_grad) {
      w->ensure_grad();
      Eigen::Map<const Eigen::VectorXd> X(x->value.data(), in_n);
      MapM dW(w->grad.data(), out_n, in_n);
      dW.noalias() += G * X.transpose();
    }
    if (has_bias && b->requires_grad) {
      b->ensure_grad();
      for (int i = 0; i < out_n; ++i) b->grad[i] += n.grad[i];
    }
  });
}

/// Row-wise softmax of a rank-2 matrix, computed with per-row max
/// subtraction so large affinities cannot overflow.
inline Var softmax_rows(const Var& a) {
  if (a->value.rank() != 2) throw ShapeError("softmax_rows: expected rank-2 input");
  int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    const double* src = a->value.data() + static_cast<std::int64_t>(i) * c;
    double* dst = out.data() + static_cast<std::int64_t>(i) * c;
    double mx = src[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      dst[j] = std::exp(src[j] - mx);
      z += dst[j];
    }
    for (int j = 0; j < c; ++j) dst[j] /= z;
  }
  return make_op(std::move(out), {a}, [a, r, c](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = n.value.data() + static_cast<std::int64_t>(i) * c;
      const double* g = n.grad.data() + static_cast<std::int64_t>(i) * c;
      double* d = a->grad.data() + static_cast<std::int64_t>(i) * c;
      double dotv = 0.0;
      for (int j = 0; j < c; ++j) dotv += y[j] * g[j];
      for (int j = 0; j < c; ++j) d[j] += y[j] * (g[j] - dotv);
    }
  });
}

/// x / max(||x||_2, eps). Below the eps floor the denominator is treated as
/// the constant eps, matching the subgradient convention for max.
inline Var l2_normalize(const Var& x, double eps = 1e-12) {
  if (x->value.rank() != 1) throw ShapeError("l2_normalize: expected rank-1 input");
  std::int64_t n_ = x->value.size();
  double sq = 0.0;
  for (std::int64_t i = 0; i < n_; ++i) sq += x->value[i] * x->value[i];
  double norm = std::sqrt(sq);
  double denom = std::max(norm, eps);
  Tensor out(x->value.shape());
  for (std::int64_t i = 0; i < n_; ++i) out[i] = x->value[i] / denom;
  bool live = norm > eps;
  return make_op(std::move(out), {x}, [x, denom, live](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    if (live) {
      double gy = 0.0;
      for (std::int64_t i = 0; i < n.grad.size(); ++i) gy += n.value[i] * n.grad[i];
      for (std::int64_t i = 0; i < n.grad.size(); ++i)
        x->grad[i] += (n.grad[i] - n.value[i] * gy) / denom;
    } else {
      for (std::int64_t i = 0; i < n.grad.size(); ++i) x->grad[i] += n.grad[i] / denom;
    }
  });
}

// ---------------------------------------------------------------------------
// convolution

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_extent(int in, int k, int stride, int pad, int dilation) {
  int eff = dilation * (k - 1) + 1;
  int num = in + 2 * pad - eff;
  if (num < 0)
    throw ShapeError("conv2d: kernel extent exceeds padded input (" + std::to_string(in) +
                     " with k=" + std::to_string(k) + ")");
  return num / stride + 1;
}

/// Unfolds (C,H,W) into a (C*kh*kw) x (OH*OW) matrix, zero-padding borders.
inline std::vector<double> im2col(const Tensor& x, int kh, int kw, const ConvSpec& cs, int oh,
                                  int ow) {
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::int64_t rows = static_cast<std::int64_t>(C) * kh * kw;
  std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  std::vector<double> col(rows * cols, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* plane = x.data() + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col.data() + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * cs.stride - cs.pad + ky * cs.dilation;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * cs.stride - cs.pad + kx * cs.dilation;
            if (ix < 0 || ix >= W) continue;
            row[static_cast<std::int64_t>(oy) * ow + ox] = plane[static_cast<std::int64_t>(iy) * W + ix];
          }
        }
      }
    }
  }
  return col;
}

/// Scatter-adds a column matrix back onto an input-shaped gradient.
inline void col2im_add(const std::vector<double>& col, Tensor& dx, int kh, int kw,
                       const ConvSpec& cs, int oh, int ow) {
  int C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
  std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    double* plane = dx.data() + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col.data() + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * cs.stride - cs.pad + ky * cs.dilation;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * cs.stride - cs.pad + kx * cs.dilation;
            if (ix < 0 || ix >= W) continue;
            plane[static_cast<std::int64_t>(iy) * W + ix] += row[static_cast<std::int64_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

/// 2-D convolution: x (Cin,H,W), w (Cout, Cin/groups, kh, kw), optional bias
/// (Cout). Implemented as im2col + one GEMM per group.
inline Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& cs = {}) {
  if (x->value.rank() != 3 || w->value.rank() != 4)
    throw ShapeError("conv2d: expected rank-3 input and rank-4 weight");
  int Cin = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  int Cout = w->value.dim(0), Cw = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  if (cs.groups < 1 || Cin % cs.groups != 0 || Cout % cs.groups != 0)
    throw ShapeError("conv2d: groups=" + std::to_string(cs.groups) + " does not divide channels");
  if (Cw != Cin / cs.groups)
    throw ShapeError("conv2d: weight " + shape_str(w->value.shape()) + " incompatible with " +
                     std::to_string(Cin) + " input channels / " + std::to_string(cs.groups) +
                     " groups");
  bool has_bias = static_cast<bool>(b);
  if (has_bias && (b->value.rank() != 1 || b->value.dim(0) != Cout))
    throw ShapeError("conv2d: bad bias shape " + shape_str(b->value.shape()));
  int oh = conv_out_extent(H, kh, cs.stride, cs.pad, cs.dilation);
  int ow = conv_out_extent(W, kw, cs.stride, cs.pad, cs.dilation);

  std::vector<double> col = im2col(x->value, kh, kw, cs, oh, ow);
  std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  std::int64_t krows = static_cast<std::int64_t>(Cw) * kh * kw;  // rows per group
  int cout_g = Cout / cs.groups;

  Tensor out({Cout, oh, ow});
  for (int g = 0; g < cs.groups; ++g) {
    CMapM Wg(w->value.data() + static_cast<std::int64_t>(g) * cout_g * krows, cout_g, krows);
    CMapM Kg(col.data() + static_cast<std::int64_t>(g) * krows * cols, krows, cols);
    MapM Og(out.data() + static_cast<std::int64_t>(g) * cout_g * cols, cout_g, cols);
    Og.noalias() = Wg * Kg;
  }
  if (has_bias)
    for (int c = 0; c < Cout; ++c) {
      double bias = b->value[c];
      double* p = out.data() + static_cast<std::int64_t>(c) * cols;
      for (std::int64_t i = 0; i < cols; ++i) p[i] += bias;
    }

  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  // The unfolded input is reused for both dW and dX; keep it only if a
  // closure is actually recorded (make_op drops the lambda otherwise).
  auto colp = std::make_shared<std::vector<double>>();
  if (grad_mode() && (x->requires_grad || w->requires_grad || (has_bias && b->requires_grad)))
    *colp = std::move(col);
  return make_op(std::move(out), std::move(parents),
                 [x, w, b, cs, has_bias, kh, kw, oh, ow, cols, krows, cout_g, colp](Node& n) {
    int Cout = n.value.dim(0);
    if (has_bias && b->requires_grad) {
      b->ensure_grad();
      for (int c = 0; c < Cout; ++c) {
        const double* g = n.grad.data() + static_cast<std::int64_t>(c) * cols;
        double s = 0.0;
        for (std::int64_t i = 0; i < cols; ++i) s += g[i];
        b->grad[c] += s;
      }
    }
    if (w->requires_grad) {
      w->ensure_grad();
      for (int g = 0; g < cs.groups; ++g) {
        CMapM Gg(n.grad.data() + static_cast<std::int64_t>(g) * cout_g * cols, cout_g, cols);
        CMapM Kg(colp->data() + static_cast<std::int64_t>(g) * krows * cols, krows, cols);
        MapM dWg(w->grad.data() + static_cast<std::int64_t>(g) * cout_g * krows, cout_g, krows);
        dWg.noalias() += Gg * Kg.transpose();
      }
    }
    if (x->requires_grad) {
      x->ensure_grad();
      std::vector<double> dcol(static_cast<std::int64_t>(cs.groups) * krows * cols);
      for (int g = 0; g < cs.groups; ++g) {
        CMapM Gg(n.grad.data() + static_cast<std::int64_t>(g) * cout_g * cols, cout_g, cols);
        CMapM Wg(w->value.data() + static_cast<std::int64_t>(g) * cout_g * krows, cout_g, krows);
        MapM dKg(dcol.data() + static_cast<std::int64_t>(g) * krows * cols, krows, cols);
        dKg.noalias() = Wg.transpose() * Gg;
      }
      col2im_add(dcol, x->grad, kh, kw, cs, oh, ow);
    }
  });
}

inline Var conv2d(const Var& x, const Var& w, const ConvSpec& cs = {}) {
  return conv2d(x, w, Var{}, cs);
}

// ---------------------------------------------------------------------------
// pooling & resampling

/// Max pooling with -inf padding semantics (padded cells never win).
inline Var maxpool2d(const Var& x, int k, int stride, int pad = 0) {
  if (x->value.rank() != 3) throw ShapeError("maxpool2d: expected rank-3 input");
  int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  int oh = conv_out_extent(H, k, stride, pad, 1);
  int ow = conv_out_extent(W, k, stride, pad, 1);
  Tensor out({C, oh, ow});
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (int c = 0; c < C; ++c) {
    const double* plane = x->value.data() + static_cast<std::int64_t>(c) * H * W;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_i = -1;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            double v = plane[static_cast<std::int64_t>(iy) * W + ix];
            if (v > best) {
              best = v;
              best_i = static_cast<std::int64_t>(c) * H * W + static_cast<std::int64_t>(iy) * W + ix;
            }
          }
        }
        std::int64_t o = (static_cast<std::int64_t>(c) * oh + oy) * ow + ox;
        out[o] = best;
        (*arg)[o] = best_i;
      }
    }
  }
  return make_op(std::move(out), {x}, [x, arg](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::int64_t o = 0; o < n.grad.size(); ++o) x->grad[(*arg)[o]] += n.grad[o];
  });
}

/// Bilinear resampling with half-pixel-aligned centers, edge-clamped.
inline Var bilinear_resize(const Var& x, int out_h, int out_w) {
  if (x->value.rank() != 3) throw ShapeError("bilinear_resize: expected rank-3 input");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("bilinear_resize: non-positive output size");
  int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  struct Axis {
    int i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
  };
  auto plan = [](int in, int out) {
    std::vector<Axis> ax(out);
    double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      int i0 = static_cast<int>(std::floor(s));
      int i1 = std::min(i0 + 1, in - 1);
      ax[o] = {i0, i1, s - i0};
    }
    return ax;
  };
  auto ys = std::make_shared<std::vector<Axis>>(plan(H, out_h));
  auto xs = std::make_shared<std::vector<Axis>>(plan(W, out_w));
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    const double* plane = x->value.data() + static_cast<std::int64_t>(c) * H * W;
    double* op = out.data() + static_cast<std::int64_t>(c) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Axis& ay = (*ys)[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const Axis& axx = (*xs)[ox];
        double top = plane[static_cast<std::int64_t>(ay.i0) * W + axx.i0] * (1.0 - axx.w1) +
                     plane[static_cast<std::int64_t>(ay.i0) * W + axx.i1] * axx.w1;
        double bot = plane[static_cast<std::int64_t>(ay.i1) * W + axx.i0] * (1.0 - axx.w1) +
                     plane[static_cast<std::int64_t>(ay.i1) * W + axx.i1] * axx.w1;
        op[static_cast<std::int64_t>(oy) * out_w + ox] = top * (1.0 - ay.w1) + bot * ay.w1;
      }
    }
  }
  return make_op(std::move(out), {x}, [x, ys, xs, C, H, W, out_h, out_w](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int c = 0; c < C; ++c) {
      double* plane = x->grad.data() + static_cast<std::int64_t>(c) * H * W;
      const double* gp = n.grad.data() + static_cast<std::int64_t>(c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const Axis& ay = (*ys)[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const Axis& axx = (*xs)[ox];
          double g = gp[static_cast<std::int64_t>(oy) * out_w + ox];
          plane[static_cast<std::int64_t>(ay.i0) * W + axx.i0] += g * (1.0 - ay.w1) * (1.0 - axx.w1);
          plane[static_cast<std::int64_t>(ay.i0) * W + axx.i1] += g * (1.0 - ay.w1) * axx.w1;
          plane[static_cast<std::int64_t>(ay.i1) * W + axx.i0] += g * ay.w1 * (1.0 - axx.w1);
          plane[static_cast<std::int64_t>(ay.i1) * W + axx.i1] += g * ay.w1 * axx.w1;
        }
      }
    }
  });
}

}  // namespace umbra::ag
