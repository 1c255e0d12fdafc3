#pragma once

// Transition dataset container.
//
// File layout (all integers little-endian):
//   bytes 0..3   magic "SWMD"
//   bytes 4..5   u16 format version (currently 1)
//   bytes 6..9   u32 byte length of the JSON header
//   ...          UTF-8 JSON header: environment, episodes, episode_len,
//                obs_shape, action_dim, seed (decimal string), truth_dim,
//                format_version
//   ...          records, episode-major then step-major. One record per step:
//                  image datasets:    obs_t u8[P], action f32[A], obs_t1 u8[P]
//                  factored datasets: obs_t f32[P], action f32[A], obs_t1 f32[P],
//                                     truth_t f32[G], truth_t1 f32[G]
// P = numel(obs_shape), A = action_dim, G = truth_dim. Image datasets have
// truth_dim 0. Every step of an episode is stored as a full (obs, action,
// next obs) triple, so consecutive records repeat the shared observation.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "actionbind/core/hash.hpp"
#include "actionbind/core/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace actionbind {

enum class ObsKind : uint8_t { kImageU8, kFactoredF32 };

struct DatasetHeader {
  std::string environment;
  int64_t episodes = 0;
  int64_t episode_len = 0;
  Shape obs_shape;
  int64_t action_dim = 0;
  uint64_t seed = 0;
  int64_t truth_dim = 0;
  ObsKind kind = ObsKind::kImageU8;

  int64_t records() const { return episodes * episode_len; }
  int64_t obs_numel() const { return numel(obs_shape); }
};

struct Dataset {
  DatasetHeader header;
  // [records, obs_numel] each; only the buffer matching header.kind is used
  std::vector<uint8_t> obs0_u8, obs1_u8;
  std::vector<float> obs0_f32, obs1_f32;
  std::vector<float> actions;         // [records, action_dim]
  std::vector<float> truth0, truth1;  // [records, truth_dim]

  int64_t records() const { return header.records(); }

  void allocate() {
    const size_t n = static_cast<size_t>(header.records());
    const size_t p = static_cast<size_t>(header.obs_numel());
    if (header.kind == ObsKind::kImageU8) {
      obs0_u8.assign(n * p, 0);
      obs1_u8.assign(n * p, 0);
    } else {
      obs0_f32.assign(n * p, 0.0f);
      obs1_f32.assign(n * p, 0.0f);
    }
    actions.assign(n * static_cast<size_t>(header.action_dim), 0.0f);
    truth0.assign(n * static_cast<size_t>(header.truth_dim), 0.0f);
    truth1.assign(n * static_cast<size_t>(header.truth_dim), 0.0f);
  }

  const uint8_t* obs0_image(int64_t r) const { return obs0_u8.data() + r * header.obs_numel(); }
  const uint8_t* obs1_image(int64_t r) const { return obs1_u8.data() + r * header.obs_numel(); }
  const float* obs0_factored(int64_t r) const { return obs0_f32.data() + r * header.obs_numel(); }
  const float* obs1_factored(int64_t r) const { return obs1_f32.data() + r * header.obs_numel(); }
  const float* action(int64_t r) const { return actions.data() + r * header.action_dim; }
};

namespace detail {

inline void write_exact(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) throw std::runtime_error("short write to " + path);
}

inline void read_exact(std::FILE* f, void* p, size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n) throw std::runtime_error("unexpected end of file in " + path);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

constexpr uint16_t kDatasetFormatVersion = 1;

inline void save_dataset(const Dataset& d, const std::string& path) {
  const DatasetHeader& h = d.header;
  nlohmann::json j{{"environment", h.environment},
                   {"episodes", h.episodes},
                   {"episode_len", h.episode_len},
                   {"obs_shape", h.obs_shape},
                   {"action_dim", h.action_dim},
                   {"seed", std::to_string(h.seed)},
                   {"truth_dim", h.truth_dim},
                   {"obs_kind", h.kind == ObsKind::kImageU8 ? "u8" : "f32"},
                   {"format_version", kDatasetFormatVersion}};
  const std::string hdr = j.dump();

  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  detail::write_exact(f.get(), "SWMD", 4, path);
  const uint16_t ver = kDatasetFormatVersion;
  detail::write_exact(f.get(), &ver, 2, path);
  const uint32_t hlen = static_cast<uint32_t>(hdr.size());
  detail::write_exact(f.get(), &hlen, 4, path);
  detail::write_exact(f.get(), hdr.data(), hdr.size(), path);

  const int64_t p = h.obs_numel(), a = h.action_dim, g = h.truth_dim;
  for (int64_t r = 0; r < d.records(); ++r) {
    if (h.kind == ObsKind::kImageU8) {
      detail::write_exact(f.get(), d.obs0_u8.data() + r * p, p, path);
      detail::write_exact(f.get(), d.actions.data() + r * a, a * 4, path);
      detail::write_exact(f.get(), d.obs1_u8.data() + r * p, p, path);
    } else {
      detail::write_exact(f.get(), d.obs0_f32.data() + r * p, p * 4, path);
      detail::write_exact(f.get(), d.actions.data() + r * a, a * 4, path);
      detail::write_exact(f.get(), d.obs1_f32.data() + r * p, p * 4, path);
      detail::write_exact(f.get(), d.truth0.data() + r * g, g * 4, path);
      detail::write_exact(f.get(), d.truth1.data() + r * g, g * 4, path);
    }
  }
  if (std::fflush(f.get()) != 0) throw std::runtime_error("short write to " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  detail::read_exact(f.get(), magic, 4, path);
  if (std::string(magic, 4) != "SWMD")
    throw std::runtime_error(path + " is not a dataset file (bad magic)");
  uint16_t ver = 0;
  detail::read_exact(f.get(), &ver, 2, path);
  if (ver != kDatasetFormatVersion)
    throw std::runtime_error(path + ": unsupported dataset format version " +
                             std::to_string(ver));
  uint32_t hlen = 0;
  detail::read_exact(f.get(), &hlen, 4, path);
  std::string hdr(hlen, '\0');
  detail::read_exact(f.get(), hdr.data(), hlen, path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bad dataset header: " + e.what());
  }
  Dataset d;
  DatasetHeader& h = d.header;
  try {
    h.environment = j.at("environment").get<std::string>();
    h.episodes = j.at("episodes").get<int64_t>();
    h.episode_len = j.at("episode_len").get<int64_t>();
    h.obs_shape = j.at("obs_shape").get<Shape>();
    h.action_dim = j.at("action_dim").get<int64_t>();
    h.seed = std::stoull(j.at("seed").get<std::string>());
    h.truth_dim = j.at("truth_dim").get<int64_t>();
    h.kind = j.at("obs_kind").get<std::string>() == "u8" ? ObsKind::kImageU8
                                                         : ObsKind::kFactoredF32;
    if (j.at("format_version").get<int64_t>() != ver)
      throw std::runtime_error("header/container version disagree");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bad dataset header: " + e.what());
  }
  if (h.episodes < 1 || h.episode_len < 1)
    throw std::runtime_error(path + ": empty dataset");
  d.allocate();

  const int64_t p = h.obs_numel(), a = h.action_dim, g = h.truth_dim;
  for (int64_t r = 0; r < d.records(); ++r) {
    if (h.kind == ObsKind::kImageU8) {
      detail::read_exact(f.get(), d.obs0_u8.data() + r * p, p, path);
      detail::read_exact(f.get(), d.actions.data() + r * a, a * 4, path);
      detail::read_exact(f.get(), d.obs1_u8.data() + r * p, p, path);
    } else {
      detail::read_exact(f.get(), d.obs0_f32.data() + r * p, p * 4, path);
      detail::read_exact(f.get(), d.actions.data() + r * a, a * 4, path);
      detail::read_exact(f.get(), d.obs1_f32.data() + r * p, p * 4, path);
      detail::read_exact(f.get(), d.truth0.data() + r * g, g * 4, path);
      detail::read_exact(f.get(), d.truth1.data() + r * g, g * 4, path);
    }
  }
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw std::runtime_error(path + ": trailing bytes after last record");
  return d;
}

// Content fingerprint over header and record buffers, for run manifests.
inline uint64_t dataset_fingerprint(const Dataset& d) {
  uint64_t h = fnv1a64(d.header.environment);
  const int64_t meta[4] = {d.header.episodes, d.header.episode_len, d.header.action_dim,
                           d.header.truth_dim};
  h = fnv1a64(meta, sizeof(meta), h);
  h = fnv1a64(d.obs0_u8.data(), d.obs0_u8.size(), h);
  h = fnv1a64(d.obs1_u8.data(), d.obs1_u8.size(), h);
  h = fnv1a64(d.obs0_f32.data(), d.obs0_f32.size() * 4, h);
  h = fnv1a64(d.obs1_f32.data(), d.obs1_f32.size() * 4, h);
  h = fnv1a64(d.actions.data(), d.actions.size() * 4, h);
  h = fnv1a64(d.truth0.data(), d.truth0.size() * 4, h);
  h = fnv1a64(d.truth1.data(), d.truth1.size() * 4, h);
  return h;
}

}  // namespace actionbind
