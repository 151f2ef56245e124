#pragma once

// Named-parameter registry plus the small layer/block building set shared
// by both backbone variants.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "umbra/core/init.hpp"
#include "umbra/core/ops.hpp"

namespace umbra {

/// Ordered registry of named learnable tensors. Order is construction
/// order, which checkpoints and the optimizer rely on.
class ParamSet {
 public:
  ag::Var add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : items_)
      if (n == name) throw Error("duplicate parameter name: " + name);
    ag::Var v = ag::parameter(std::move(init));
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }

  ag::Var find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    return {};
  }

  std::vector<ag::Var> vars() const {
    std::vector<ag::Var> out;
    out.reserve(items_.size());
    for (const auto& [n, v] : items_) out.push_back(v);
    return out;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : items_) n += v->value.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, ag::Var>> items_;
};

struct Conv {
  ag::Var w, b;
  ag::ConvSpec cs;
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, cs); }
};

/// Same-padding convolution for odd kernels; bias zero-initialized.
inline Conv make_conv(ParamSet& ps, const std::string& name, Rng& rng, int in, int out, int k,
                      int stride = 1, int dilation = 1, int groups = 1, bool bias = true) {
  Conv c;
  c.w = ps.add(name + ".w", init_conv_weight(rng, {out, in / groups, k, k}));
  if (bias) c.b = ps.add(name + ".b", Tensor::zeros({out}));
  c.cs = {stride, dilation * (k - 1) / 2, dilation, groups};
  return c;
}

struct Linear {
  ag::Var w, b;
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

inline Linear make_linear(ParamSet& ps, const std::string& name, Rng& rng, int in, int out) {
  Linear l;
  l.w = ps.add(name + ".w", init_linear_weight(rng, {out, in}));
  l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

/// Two 3x3 convs with a projected shortcut when shape changes (tiny variant).
struct BasicBlock {
  Conv c1, c2, sc;
  bool has_sc = false;
  ag::Var operator()(const ag::Var& x) const {
    ag::Var y = c2(ag::relu(c1(x)));
    ag::Var s = has_sc ? sc(x) : x;
    return ag::relu(ag::add(y, s));
  }
};

inline BasicBlock make_basic_block(ParamSet& ps, const std::string& name, Rng& rng, int in,
                                   int out, int stride) {
  BasicBlock b;
  b.c1 = make_conv(ps, name + ".c1", rng, in, out, 3, stride);
  b.c2 = make_conv(ps, name + ".c2", rng, out, out, 3, 1);
  b.has_sc = (in != out || stride != 1);
  if (b.has_sc) b.sc = make_conv(ps, name + ".sc", rng, in, out, 1, stride);
  return b;
}

/// Grouped 1-3-1 bottleneck (reference variant, cardinality in `groups`).
struct Bottleneck {
  Conv reduce, grouped, expand, sc;
  bool has_sc = false;
  ag::Var operator()(const ag::Var& x) const {
    ag::Var y = ag::relu(reduce(x));
    y = ag::relu(grouped(y));
    y = expand(y);
    ag::Var s = has_sc ? sc(x) : x;
    return ag::relu(ag::add(y, s));
  }
};

inline Bottleneck make_bottleneck(ParamSet& ps, const std::string& name, Rng& rng, int in,
                                  int width, int out, int stride, int dilation, int groups) {
  Bottleneck b;
  b.reduce = make_conv(ps, name + ".reduce", rng, in, width, 1);
  b.grouped = make_conv(ps, name + ".grouped", rng, width, width, 3, stride, dilation, groups);
  b.expand = make_conv(ps, name + ".expand", rng, width, out, 1);
  b.has_sc = (in != out || stride != 1);
  if (b.has_sc) b.sc = make_conv(ps, name + ".sc", rng, in, out, 1, stride);
  return b;
}

}  // namespace umbra
