#pragma once

#include "rmap/optim.hpp"
#include "rmap/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

/// Checkpoints are a flat binary container: 8-byte magic, little-endian
/// u64 header length, a JSON header describing every named array (name,
/// shape, dtype, byte offset), then the raw float64 payload.
namespace ckpt {

constexpr char kMagic[9] = "RMAPCKP1";

struct NamedArray {
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::ordered_json meta;  // epoch, step, anything else the writer adds
  std::map<std::string, NamedArray> arrays;
};

}  // namespace ckpt

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::map<std::string, ckpt::NamedArray>& arrays,
                            const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json header;
  header["format"] = "rmap-checkpoint";
  header["version"] = 1;
  for (const auto& [k, v] : meta.items()) header[k] = v;

  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, arr] : arrays) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = arr.shape;
    t["dtype"] = "f64";
    t["offset"] = offset;
    t["numel"] = arr.data.size();
    tensors.push_back(t);
    offset += arr.data.size() * sizeof(double);
  }
  header["tensors"] = tensors;

  const std::string header_str = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  f.write(ckpt::kMagic, 8);
  const std::uint64_t hlen = header_str.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  f.write(lenbuf, 8);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, arr] : arrays)
    f.write(reinterpret_cast<const char*>(arr.data.data()),
            static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

inline ckpt::Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, ckpt::kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  char lenbuf[8];
  f.read(lenbuf, 8);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string header_str(hlen, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path.string());

  ckpt::Checkpoint out;
  const auto header = nlohmann::ordered_json::parse(header_str);
  if (header.value("format", "") != "rmap-checkpoint")
    throw std::runtime_error("load_checkpoint: unknown format in " + path.string());
  out.meta = header;

  const std::streampos payload_start = f.tellg();
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name");
    ckpt::NamedArray arr;
    arr.shape = t.at("shape").get<Shape>();
    const std::size_t numel = t.at("numel");
    if (t.at("dtype") != "f64")
      throw std::runtime_error("load_checkpoint: unsupported dtype for " + name);
    arr.data.resize(numel);
    f.seekg(payload_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(arr.data.data()),
           static_cast<std::streamsize>(numel * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated payload for " + name);
    out.arrays.emplace(name, std::move(arr));
  }
  return out;
}

/// Parameters plus optimizer moments under the "adamw.m/" and "adamw.v/"
/// prefixes, so a run can resume exactly where it stopped.
inline void save_training_checkpoint(const std::filesystem::path& path, const ParamMap& params,
                                     const AdamW* opt, std::size_t epoch,
                                     const nlohmann::ordered_json& extra_meta = {}) {
  std::map<std::string, ckpt::NamedArray> arrays;
  for (const auto& [name, t] : params) arrays[name] = {t.shape(), t.value()};
  nlohmann::ordered_json meta;
  meta["epoch"] = epoch;
  meta["step"] = opt ? opt->step_count() : 0;
  if (extra_meta.is_object())
    for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  if (opt) {
    for (const auto& [name, mo] : opt->state()) {
      arrays["adamw.m/" + name] = {{mo.m.size()}, mo.m};
      arrays["adamw.v/" + name] = {{mo.v.size()}, mo.v};
    }
  }
  save_checkpoint(path, arrays, meta);
}

/// Restores parameter values in place; shapes must match exactly.
inline void restore_params(const ckpt::Checkpoint& ck, ParamMap& params) {
  for (auto& [name, t] : params) {
    const auto it = ck.arrays.find(name);
    if (it == ck.arrays.end())
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (it->second.shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': stored " +
                               shape_str(it->second.shape) + ", expected " +
                               shape_str(t.shape()));
    t.value_mut() = it->second.data;
  }
}

inline void restore_optimizer(const ckpt::Checkpoint& ck, const ParamMap& params, AdamW& opt) {
  opt.set_step_count(ck.meta.value("step", 0));
  for (const auto& [name, t] : params) {
    const auto m = ck.arrays.find("adamw.m/" + name);
    const auto v = ck.arrays.find("adamw.v/" + name);
    if (m == ck.arrays.end() || v == ck.arrays.end()) continue;  // fresh optimizer state
    opt.state()[name] = {m->second.data, v->second.data};
  }
}

}  // namespace rmap
