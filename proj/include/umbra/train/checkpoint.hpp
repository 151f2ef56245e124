#pragma once

// Checkpoint container: a flat binary file holding the named parameter
// tensors, training progress, the sampler's RNG state, and (optionally)
// optimizer moments. Values are raw doubles in native byte order; loading
// restores parameters bit for bit. A checkpoint written against a
// different configuration still loads (the stored hash only triggers a
// warning) as long as names and shapes line up.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "umbra/core/error.hpp"
#include "umbra/core/tensor.hpp"
#include "umbra/net/blocks.hpp"
#include "umbra/train/adam.hpp"

namespace umbra {

inline constexpr char kCheckpointMagic[4] = {'U', 'M', 'B', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainProgress {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::string rng_state;  // serialized sampler engine, empty if untracked
};

struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  TrainProgress progress;
  bool has_optimizer = false;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_pod(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_pod<std::uint64_t>(os, s.size());
  put_bytes(os, s.data(), s.size());
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw IoError("checkpoint: truncated file");
}

template <typename T>
T get_pod(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof(T));
  return v;
}

inline std::string get_string(std::istream& is) {
  auto n = get_pod<std::uint64_t>(is);
  if (n > (1ull << 32)) throw IoError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n);
  return s;
}

inline void put_tensor_data(std::ostream& os, const Tensor& t) {
  put_bytes(os, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
}

inline void get_tensor_data(std::istream& is, Tensor& t) {
  get_bytes(is, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            const Adam* optimizer, const TrainProgress& progress,
                            std::uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
  detail::put_bytes(os, kCheckpointMagic, 4);
  detail::put_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::put_pod<std::uint64_t>(os, config_hash);
  detail::put_pod<std::int64_t>(os, progress.epoch);
  detail::put_pod<std::int64_t>(os, progress.step);
  detail::put_string(os, progress.rng_state);
  detail::put_pod<std::uint64_t>(os, params.items().size());
  for (const auto& [name, var] : params.items()) {
    detail::put_string(os, name);
    const Tensor& t = var->value;
    detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::put_pod<std::int32_t>(os, d);
    detail::put_tensor_data(os, t);
  }
  bool has_opt = optimizer != nullptr;
  detail::put_pod<std::uint8_t>(os, has_opt ? 1 : 0);
  if (has_opt) {
    if (optimizer->params().size() != params.items().size())
      throw Error("checkpoint: optimizer tracks a different parameter list");
    detail::put_pod<std::int64_t>(os, optimizer->steps_taken());
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      detail::put_tensor_data(os, optimizer->first_moments()[i]);
      detail::put_tensor_data(os, optimizer->second_moments()[i]);
    }
  }
  os.flush();
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

/// Loads `path` into the existing parameter set (and optimizer, when given
/// and the file carries moments). Structural problems — bad magic, unknown
/// version, truncation, name/shape mismatch — raise IoError. A stored
/// config hash that differs from `expected_config_hash` only warns.
inline CheckpointInfo load_checkpoint(const std::string& path, ParamSet& params,
                                      Adam* optimizer, std::uint64_t expected_config_hash,
                                      std::ostream* warn = &std::cerr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  auto version = detail::get_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointInfo info;
  info.config_hash = detail::get_pod<std::uint64_t>(is);
  info.progress.epoch = detail::get_pod<std::int64_t>(is);
  info.progress.step = detail::get_pod<std::int64_t>(is);
  info.progress.rng_state = detail::get_string(is);
  if (info.config_hash != expected_config_hash && warn)
    *warn << "warning: checkpoint " << path << " was written under a different "
          << "configuration (stored hash " << info.config_hash << ", current "
          << expected_config_hash << ")\n";
  auto count = detail::get_pod<std::uint64_t>(is);
  if (count != params.items().size())
    throw IoError("checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                  std::to_string(params.items().size()));
  for (const auto& [name, var] : params.items()) {
    std::string stored = detail::get_string(is);
    if (stored != name)
      throw IoError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
    auto rank = detail::get_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_pod<std::int32_t>(is);
    if (shape != var->value.shape())
      throw IoError("checkpoint: shape mismatch for '" + name + "': stored " +
                    shape_str(shape) + ", model " + shape_str(var->value.shape()));
    detail::get_tensor_data(is, var->value);
  }
  info.has_optimizer = detail::get_pod<std::uint8_t>(is) != 0;
  if (info.has_optimizer && optimizer) {
    if (optimizer->params().size() != params.items().size())
      throw Error("checkpoint: optimizer tracks a different parameter list");
    optimizer->set_steps_taken(detail::get_pod<std::int64_t>(is));
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      detail::get_tensor_data(is, optimizer->first_moments()[i]);
      detail::get_tensor_data(is, optimizer->second_moments()[i]);
    }
  } else if (info.has_optimizer) {
    // Caller does not want the moments; skip over them.
    auto t = detail::get_pod<std::int64_t>(is);
    (void)t;
    for (const auto& [name, var] : params.items()) {
      (void)name;
      std::vector<double> skip(static_cast<std::size_t>(var->value.size()) * 2);
      detail::get_bytes(is, skip.data(), skip.size() * sizeof(double));
    }
  }
  return info;
}

}  // namespace umbra
