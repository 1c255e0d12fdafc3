#pragma once

// Model checkpoint container.
//
// File layout (little-endian):
//   bytes 0..3   magic "SWMC"
//   bytes 4..5   u16 format version (currently 1)
//   bytes 6..9   u32 byte length of the JSON metadata
//   ...          UTF-8 JSON metadata. Caller-provided fields plus "params":
//                an ordered list of {"name", "shape"} entries.
//   ...          raw f32 parameter blobs concatenated in "params" order.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "actionbind/core/adam.hpp"
#include "actionbind/io/dataset.hpp"

namespace actionbind {

constexpr uint16_t kCheckpointFormatVersion = 1;

inline void save_checkpoint(const std::string& path, nlohmann::json meta,
                            ParamStore<float>& params) {
  nlohmann::json plist = nlohmann::json::array();
  for (auto* p : params.all())
    plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
  meta["params"] = std::move(plist);
  const std::string hdr = meta.dump();

  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  detail::write_exact(f.get(), "SWMC", 4, path);
  const uint16_t ver = kCheckpointFormatVersion;
  detail::write_exact(f.get(), &ver, 2, path);
  const uint32_t hlen = static_cast<uint32_t>(hdr.size());
  detail::write_exact(f.get(), &hlen, 4, path);
  detail::write_exact(f.get(), hdr.data(), hdr.size(), path);
  for (auto* p : params.all())
    detail::write_exact(f.get(), p->value.data.data(), p->value.data.size() * 4, path);
  if (std::fflush(f.get()) != 0) throw std::runtime_error("short write to " + path);
}

inline nlohmann::json read_checkpoint_meta(const std::string& path, std::FILE* f) {
  char magic[4];
  detail::read_exact(f, magic, 4, path);
  if (std::string(magic, 4) != "SWMC")
    throw std::runtime_error(path + " is not a checkpoint file (bad magic)");
  uint16_t ver = 0;
  detail::read_exact(f, &ver, 2, path);
  if (ver != kCheckpointFormatVersion)
    throw std::runtime_error(path + ": unsupported checkpoint format version " +
                             std::to_string(ver));
  uint32_t hlen = 0;
  detail::read_exact(f, &hlen, 4, path);
  std::string hdr(hlen, '\0');
  detail::read_exact(f, hdr.data(), hlen, path);
  try {
    return nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bad checkpoint metadata: " + e.what());
  }
}

inline nlohmann::json peek_checkpoint_meta(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_checkpoint_meta(path, f.get());
}

// Loads parameter values into an existing store. The store must contain
// exactly the checkpoint's parameters with matching shapes; callers build the
// model from checkpoint metadata first, then load.
inline nlohmann::json load_checkpoint(const std::string& path, ParamStore<float>& params) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  nlohmann::json meta = read_checkpoint_meta(path, f.get());

  const auto& plist = meta.at("params");
  if (plist.size() != params.size())
    throw std::runtime_error(path + ": checkpoint has " + std::to_string(plist.size()) +
                             " parameters, model has " + std::to_string(params.size()));
  for (const auto& entry : plist) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    if (!params.contains(name))
      throw std::runtime_error(path + ": model has no parameter named " + name);
    Parameter<float>& p = params.at(name);
    if (p.value.shape != shape)
      throw std::runtime_error(path + ": parameter " + name + " is " + shape_str(shape) +
                               " in checkpoint but " + shape_str(p.value.shape) + " in model");
    detail::read_exact(f.get(), p.value.data.data(), p.value.data.size() * 4, path);
  }
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw std::runtime_error(path + ": trailing bytes after last parameter blob");
  return meta;
}

}  // namespace actionbind
