#pragma once

// The two feature-extraction backbones. Both return the pre-pyramid deep
// feature map plus a shallow skip feature L (stride 4).
//
//  - tiny: stem + two basic residual stages, widths/strides from config;
//    trains from scratch in seconds on synthetic fixtures.
//  - reference: grouped-bottleneck residual net (cardinality 32, width 4,
//    depths 3/4/23/3) with the final stage un-strided and dilated by 2, so
//    the deep feature sits at stride 16 — 416 input -> 26x26 grid.

#include <string>
#include <vector>

#include "umbra/config.hpp"
#include "umbra/net/blocks.hpp"

namespace umbra {

struct BackboneOut {
  ag::Var deep;  // pre-pyramid feature map
  ag::Var low;   // shallow skip feature
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamSet& ps, Rng& rng, const BackboneConfig& bc) : variant_(bc.variant) {
    if (variant_ == "tiny") {
      const auto& ch = bc.tiny_channels;
      const auto& st = bc.tiny_strides;
      stem_ = make_conv(ps, "backbone.stem", rng, 3, ch[0], 3, st[0]);
      stage1_ = make_basic_block(ps, "backbone.stage1", rng, ch[0], ch[1], st[1]);
      stage2_ = make_basic_block(ps, "backbone.stage2", rng, ch[1], ch[2], st[2]);
      deep_channels_ = ch[2];
      low_channels_ = ch[1];
      low_stride_ = st[0] * st[1];
      total_stride_ = st[0] * st[1] * st[2];
    } else {
      stem_ = make_conv(ps, "backbone.stem", rng, 3, 64, 7, 2);
      struct StageSpec {
        int blocks, width, out, stride, dilation;
      };
      // depths 3/4/23/3; final stage stride 1 with dilation 2
      const StageSpec specs[4] = {
          {3, 128, 256, 1, 1}, {4, 256, 512, 2, 1}, {23, 512, 1024, 2, 1}, {3, 1024, 2048, 1, 2}};
      int in = 64;
      for (int s = 0; s < 4; ++s) {
        const StageSpec& sp = specs[s];
        for (int i = 0; i < sp.blocks; ++i) {
          std::string name =
              "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(i);
          int stride = (i == 0) ? sp.stride : 1;
          stages_[s].push_back(
              make_bottleneck(ps, name, rng, in, sp.width, sp.out, stride, sp.dilation, 32));
          in = sp.out;
        }
      }
      deep_channels_ = 2048;
      low_channels_ = 256;
      low_stride_ = 4;
      total_stride_ = 16;
    }
  }

  BackboneOut operator()(const ag::Var& x) const {
    if (x->value.rank() != 3 || x->value.dim(0) != 3)
      throw ShapeError("backbone: expected (3,H,W) input, got " + shape_str(x->value.shape()));
    if (x->value.dim(1) % total_stride_ != 0 || x->value.dim(2) % total_stride_ != 0)
      throw ShapeError("backbone: input " + shape_str(x->value.shape()) +
                       " not divisible by total stride " + std::to_string(total_stride_));
    if (variant_ == "tiny") {
      ag::Var s = ag::relu(stem_(x));
      ag::Var l = stage1_(s);
      ag::Var d = stage2_(l);
      return {d, l};
    }
    ag::Var s = ag::maxpool2d(ag::relu(stem_(x)), 3, 2, 1);
    for (const auto& b : stages_[0]) s = b(s);
    ag::Var low = s;
    for (int st = 1; st < 4; ++st)
      for (const auto& b : stages_[st]) s = b(s);
    return {s, low};
  }

  int deep_channels() const { return deep_channels_; }
  int low_channels() const { return low_channels_; }
  int low_stride() const { return low_stride_; }
  int total_stride() const { return total_stride_; }

 private:
  std::string variant_;
  Conv stem_;
  BasicBlock stage1_, stage2_;            // tiny
  std::vector<Bottleneck> stages_[4];     // reference
  int deep_channels_ = 0, low_channels_ = 0, low_stride_ = 0, total_stride_ = 0;
};

}  // namespace umbra
