#pragma once

// Multi-rate context head: 1x1 branch, three dilated 3x3 branches, and a
// global-average branch broadcast back over space, concatenated and
// projected. All branches are linear (no activations) and the dilated
// branches use edge-replicate padding, so the head maps constant fields to
// constant fields and zero to zero (with zero biases) exactly.

#include <array>

#include "umbra/net/blocks.hpp"

namespace umbra {

class Aspp {
 public:
  Aspp() = default;
  Aspp(ParamSet& ps, Rng& rng, int in_channels, int out_channels,
       const std::vector<int>& dilations)
      : out_channels_(out_channels), dilations_(dilations) {
    b1_ = make_conv(ps, "aspp.b1", rng, in_channels, out_channels, 1);
    for (int i = 0; i < 3; ++i)
      dil_[i] = make_conv(ps, "aspp.d" + std::to_string(dilations[i]), rng, in_channels,
                          out_channels, 3, 1, 1 /*dilation folded into pad_edge*/);
    pool_fc_ = make_linear(ps, "aspp.pool", rng, in_channels, out_channels);
    project_ = make_conv(ps, "aspp.project", rng, 5 * out_channels, out_channels, 1);
  }

  ag::Var operator()(const ag::Var& x) const {
    int h = x->value.dim(1), w = x->value.dim(2);
    ag::Var a = b1_(x);
    std::vector<ag::Var> branches{a};
    for (int i = 0; i < 3; ++i) {
      int d = dilations_[i];
      // Replicate-pad by the effective half-support, then convolve unpadded.
      ag::Var padded = ag::pad_edge(x, d);
      branches.push_back(
          ag::conv2d(padded, dil_[i].w, dil_[i].b, {.stride = 1, .pad = 0, .dilation = d}));
    }
    ag::Var g = pool_fc_(ag::global_avg_pool(x));
    branches.push_back(ag::bcast_to(ag::reshape(g, {out_channels_, 1, 1}), {out_channels_, h, w}));
    return project_(ag::concat_ch(branches));
  }

  int out_channels() const { return out_channels_; }

 private:
  int out_channels_ = 0;
  std::vector<int> dilations_;
  Conv b1_;
  std::array<Conv, 3> dil_;
  Linear pool_fc_;
  Conv project_;
};

}  // namespace umbra
