#pragma once

// Declarative run configuration: JSON file -> typed structs with strict
// unknown-key rejection, dotted-path overrides, and a stable content hash
// that checkpoints embed.

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "umbra/core/error.hpp"

namespace umbra {

struct DataConfig {
  std::string root;
  int input_size = 416;
  std::vector<double> mean = {0.485, 0.456, 0.406};
  std::vector<double> std = {0.229, 0.224, 0.225};
};

struct BackboneConfig {
  std::string variant = "tiny";  // "tiny" | "reference"
  // Tiny-variant knobs (the reference variant pins its own architecture:
  // dilated final stage, 256-channel embedding, pyramid rates 12/24/36).
  std::vector<int> tiny_channels = {16, 24, 32};  // stem, stage1, stage2
  std::vector<int> tiny_strides = {2, 2, 2};
  int embed_channels = 32;
  int low_channels = 16;
  std::vector<int> aspp_dilations = {2, 4, 6};
  bool share_refine = true;        // one refinement conv shared by both frames
  std::string pretrained_path;     // optional checkpoint supplying backbone weights
};

struct TrainConfig {
  double lr_scratch = 5e-4;
  double lr_pretrained = 5e-5;
  double weight_decay = 5e-4;
  int batch_size = 5;
  int epochs = 12;
  double warmup_epochs = 1.0;
  double warmup_start_factor = 0.1;
  double beta = 10.0;
  double tau = 0.7;
  double epsilon = 1e-12;
  int max_offset = 5;
  std::uint64_t seed = 0;
  bool enable_coattention = true;
  bool enable_dual_gate = true;
  bool enable_tmodule = true;
  bool mixed_precision = false;
};

struct InferConfig {
  int window = 5;  // frames averaged per output map
};

struct Config {
  DataConfig data;
  BackboneConfig backbone;
  TrainConfig train;
  InferConfig infer;
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline void expect_keys(const nlohmann::json& j, const std::string& section,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown config key '" + (section.empty() ? it.key() : section + "." + it.key()) + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const Config& c) {
  nlohmann::json j;
  j["data"] = {{"root", c.data.root},
               {"input_size", c.data.input_size},
               {"mean", c.data.mean},
               {"std", c.data.std}};
  j["backbone"] = {{"variant", c.backbone.variant},
                   {"tiny_channels", c.backbone.tiny_channels},
                   {"tiny_strides", c.backbone.tiny_strides},
                   {"embed_channels", c.backbone.embed_channels},
                   {"low_channels", c.backbone.low_channels},
                   {"aspp_dilations", c.backbone.aspp_dilations},
                   {"share_refine", c.backbone.share_refine},
                   {"pretrained_path", c.backbone.pretrained_path}};
  j["train"] = {{"lr_scratch", c.train.lr_scratch},
                {"lr_pretrained", c.train.lr_pretrained},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"warmup_epochs", c.train.warmup_epochs},
                {"warmup_start_factor", c.train.warmup_start_factor},
                {"beta", c.train.beta},
                {"tau", c.train.tau},
                {"epsilon", c.train.epsilon},
                {"max_offset", c.train.max_offset},
                {"seed", c.train.seed},
                {"enable_coattention", c.train.enable_coattention},
                {"enable_dual_gate", c.train.enable_dual_gate},
                {"enable_tmodule", c.train.enable_tmodule},
                {"mixed_precision", c.train.mixed_precision}};
  j["infer"] = {{"window", c.infer.window}};
  return j;
}

inline void validate(const Config& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(c.train.lr_scratch, "train.lr_scratch");
  positive(c.train.lr_pretrained, "train.lr_pretrained");
  positive(c.train.tau, "train.tau");
  positive(c.train.epsilon, "train.epsilon");
  if (c.train.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (c.train.beta < 0.0) throw ConfigError("train.beta must be >= 0");
  if (c.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (c.train.warmup_epochs < 0.0) throw ConfigError("train.warmup_epochs must be >= 0");
  if (c.train.warmup_start_factor <= 0.0 || c.train.warmup_start_factor > 1.0)
    throw ConfigError("train.warmup_start_factor must be in (0,1]");
  if (c.train.max_offset < 1) throw ConfigError("train.max_offset must be >= 1");
  if (c.train.mixed_precision)
    throw ConfigError(
        "train.mixed_precision is not available in this CPU double-precision build");
  if (c.data.input_size < 8) throw ConfigError("data.input_size must be >= 8");
  if (c.data.mean.size() != 3 || c.data.std.size() != 3)
    throw ConfigError("data.mean and data.std must have 3 entries");
  for (double s : c.data.std)
    if (!(s > 0.0)) throw ConfigError("data.std entries must be positive");
  if (c.backbone.variant != "tiny" && c.backbone.variant != "reference")
    throw ConfigError("backbone.variant must be 'tiny' or 'reference'");
  if (c.backbone.tiny_channels.size() != 3 || c.backbone.tiny_strides.size() != 3)
    throw ConfigError("backbone.tiny_channels and backbone.tiny_strides must have 3 entries");
  for (int ch : c.backbone.tiny_channels)
    if (ch < 1) throw ConfigError("backbone.tiny_channels entries must be >= 1");
  for (int s : c.backbone.tiny_strides)
    if (s != 1 && s != 2) throw ConfigError("backbone.tiny_strides entries must be 1 or 2");
  if (c.backbone.embed_channels < 1) throw ConfigError("backbone.embed_channels must be >= 1");
  if (c.backbone.low_channels < 1) throw ConfigError("backbone.low_channels must be >= 1");
  if (c.backbone.aspp_dilations.size() != 3)
    throw ConfigError("backbone.aspp_dilations must have 3 entries");
  for (int d : c.backbone.aspp_dilations)
    if (d < 1) throw ConfigError("backbone.aspp_dilations entries must be >= 1");
  if (c.infer.window < 1) throw ConfigError("infer.window must be >= 1");
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  detail::expect_keys(j, "", {"data", "backbone", "train", "infer"});
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::expect_keys(d, "data", {"root", "input_size", "mean", "std"});
    detail::read(d, "root", c.data.root, "data");
    detail::read(d, "input_size", c.data.input_size, "data");
    detail::read(d, "mean", c.data.mean, "data");
    detail::read(d, "std", c.data.std, "data");
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    detail::expect_keys(b, "backbone",
                        {"variant", "tiny_channels", "tiny_strides", "embed_channels",
                         "low_channels", "aspp_dilations", "share_refine", "pretrained_path"});
    detail::read(b, "variant", c.backbone.variant, "backbone");
    detail::read(b, "tiny_channels", c.backbone.tiny_channels, "backbone");
    detail::read(b, "tiny_strides", c.backbone.tiny_strides, "backbone");
    detail::read(b, "embed_channels", c.backbone.embed_channels, "backbone");
    detail::read(b, "low_channels", c.backbone.low_channels, "backbone");
    detail::read(b, "aspp_dilations", c.backbone.aspp_dilations, "backbone");
    detail::read(b, "share_refine", c.backbone.share_refine, "backbone");
    detail::read(b, "pretrained_path", c.backbone.pretrained_path, "backbone");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::expect_keys(
        t, "train",
        {"lr_scratch", "lr_pretrained", "weight_decay", "batch_size", "epochs", "warmup_epochs",
         "warmup_start_factor", "beta", "tau", "epsilon", "max_offset", "seed",
         "enable_coattention", "enable_dual_gate", "enable_tmodule", "mixed_precision"});
    detail::read(t, "lr_scratch", c.train.lr_scratch, "train");
    detail::read(t, "lr_pretrained", c.train.lr_pretrained, "train");
    detail::read(t, "weight_decay", c.train.weight_decay, "train");
    detail::read(t, "batch_size", c.train.batch_size, "train");
    detail::read(t, "epochs", c.train.epochs, "train");
    detail::read(t, "warmup_epochs", c.train.warmup_epochs, "train");
    detail::read(t, "warmup_start_factor", c.train.warmup_start_factor, "train");
    detail::read(t, "beta", c.train.beta, "train");
    detail::read(t, "tau", c.train.tau, "train");
    detail::read(t, "epsilon", c.train.epsilon, "train");
    detail::read(t, "max_offset", c.train.max_offset, "train");
    detail::read(t, "seed", c.train.seed, "train");
    detail::read(t, "enable_coattention", c.train.enable_coattention, "train");
    detail::read(t, "enable_dual_gate", c.train.enable_dual_gate, "train");
    detail::read(t, "enable_tmodule", c.train.enable_tmodule, "train");
    detail::read(t, "mixed_precision", c.train.mixed_precision, "train");
  }
  if (j.contains("infer")) {
    const auto& i = j.at("infer");
    detail::expect_keys(i, "infer", {"window"});
    detail::read(i, "window", c.infer.window, "infer");
  }
  validate(c);
  return c;
}

/// Applies one `--set section.key=value` override onto the raw JSON tree.
/// The value is parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings
  nlohmann::json* cur = &j;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("bad override path '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      break;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

inline Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  }
  for (const std::string& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

/// Stable content hash over the canonical (sorted-key) serialization.
inline std::uint64_t config_hash(const Config& c) { return fnv1a(to_json(c).dump()); }

}  // namespace umbra
