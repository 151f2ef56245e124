#pragma once

// Three-branch segmentation network. All branches share one embedding
// (backbone + context pyramid); the two same-video branches exchange
// information through the dual gated co-attention module; the third
// (other-video) branch decodes its own embedding directly and only feeds
// the similarity-contrast term. The decoder concatenates the (possibly
// refined) deep features with a projected shallow skip, applies a 3x3 then
// a 1x1 convolution, and restores input resolution bilinearly on logits.

#include <string>
#include <utility>
#include <vector>

#include "umbra/config.hpp"
#include "umbra/net/aspp.hpp"
#include "umbra/net/backbone.hpp"
#include "umbra/net/dgc.hpp"
#include "umbra/net/tmodule.hpp"

namespace umbra {

/// Derives a per-purpose seed so weight init and data sampling never share
/// a random stream (splitmix64 over seed ^ stream tag).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kSampleStream = 2;

struct EmbedOut {
  ag::Var e;    // pyramid output, the branch embedding E
  ag::Var low;  // shallow skip feature L
};

/// Backbone weights count as "pretrained" only for the reference variant
/// (the tiny net always trains from scratch). Everything else — pyramid,
/// co-attention, decoder — is a scratch layer.
inline bool pretrained_param(const std::string& variant, const std::string& name) {
  return variant == "reference" && name.rfind("backbone.", 0) == 0;
}

struct TripleOut {
  ag::Var logits_a1, logits_a2, logits_b;  // (H,W) logits at input resolution
  ag::Var aux;                             // similarity-contrast loss; null when disabled
};

class Model {
 public:
  explicit Model(const Config& cfg) : cfg_(cfg) {
    Rng rng(stream_seed(cfg.train.seed, kInitStream));
    backbone_ = Backbone(params_, rng, cfg.backbone);
    int embed = (cfg.backbone.variant == "reference") ? 256 : cfg.backbone.embed_channels;
    std::vector<int> dil = (cfg.backbone.variant == "reference") ? std::vector<int>{12, 24, 36}
                                                                 : cfg.backbone.aspp_dilations;
    aspp_ = Aspp(params_, rng, backbone_.deep_channels(), embed, dil);
    dgc_ = make_dgc(params_, rng, embed, cfg.backbone.share_refine);
    low_proj_ = make_conv(params_, "decoder.low_proj", rng, backbone_.low_channels(),
                          cfg.backbone.low_channels, 1);
    fuse_ = make_conv(params_, "decoder.fuse", rng, embed + cfg.backbone.low_channels, embed, 3);
    head_ = make_conv(params_, "decoder.head", rng, embed, 1, 1);
    embed_channels_ = embed;
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  EmbedOut embed(const ag::Var& image) const {
    BackboneOut b = backbone_(image);
    return {aspp_(b.deep), b.low};
  }
  EmbedOut embed(const Tensor& image) const { return embed(ag::constant(image)); }

  /// Refined deep features + shallow skip -> logits at input resolution.
  ag::Var decode(const ag::Var& c, const ag::Var& low, int out_h, int out_w) const {
    ag::Var lp = ag::relu(low_proj_(low));
    ag::Var cu = ag::bilinear_resize(c, low->value.dim(1), low->value.dim(2));
    ag::Var y = ag::relu(fuse_(ag::concat_ch(cu, lp)));
    ag::Var logits = ag::bilinear_resize(head_(y), out_h, out_w);
    return ag::reshape(logits, {out_h, out_w});
  }

  /// The full three-branch forward. Branches a1/a2 come from one video,
  /// b from another; ablation flags in the train config control whether
  /// the co-attention exchange, its gates, and the auxiliary term run.
  TripleOut forward_triple(const Tensor& img_a1, const Tensor& img_a2,
                           const Tensor& img_b) const {
    const TrainConfig& tc = cfg_.train;
    EmbedOut a1 = embed(img_a1), a2 = embed(img_a2), b = embed(img_b);
    auto [c1, c2] = dgc_forward(a1.e, a2.e, dgc_, tc.enable_coattention, tc.enable_dual_gate);
    TripleOut out;
    out.logits_a1 = decode(c1, a1.low, img_a1.dim(1), img_a1.dim(2));
    out.logits_a2 = decode(c2, a2.low, img_a2.dim(1), img_a2.dim(2));
    out.logits_b = decode(b.e, b.low, img_b.dim(1), img_b.dim(2));
    if (tc.enable_tmodule)
      out.aux = similarity_contrast_loss(a1.e, a2.e, b.e, tc.tau, tc.epsilon);
    return out;
  }

  /// Single-pair forward used at inference: logits for the first frame
  /// when paired with `partner` under the configured topology.
  ag::Var forward_pair(const Tensor& img, const Tensor& partner) const {
    EmbedOut a1 = embed(img), a2 = embed(partner);
    auto [c1, c2] =
        dgc_forward(a1.e, a2.e, dgc_, cfg_.train.enable_coattention, cfg_.train.enable_dual_gate);
    (void)c2;
    return decode(c1, a1.low, img.dim(1), img.dim(2));
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Config& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  const Aspp& aspp() const { return aspp_; }
  const DgcParams& dgc() const { return dgc_; }
  int embed_channels() const { return embed_channels_; }

  bool is_pretrained_param(const std::string& name) const {
    return pretrained_param(cfg_.backbone.variant, name);
  }

 private:
  Config cfg_;
  ParamSet params_;
  Backbone backbone_;
  Aspp aspp_;
  DgcParams dgc_;
  Conv low_proj_, fuse_, head_;
  int embed_channels_ = 0;
};

}  // namespace umbra
