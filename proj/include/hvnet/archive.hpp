// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvnet/config.hpp"
#include "hvnet/error.hpp"
#include "hvnet/model.hpp"

namespace hvnet {

// Layout: "HVNW" | u32 version | u64 manifest bytes | manifest JSON | payload.
// The manifest lists {name, shape, offset} per tensor; offsets are byte
// offsets into the payload, which holds little-endian float32 values.

inline constexpr char kArchiveMagic[4] = {'H', 'V', 'N', 'W'};
inline constexpr std::uint32_t kArchiveVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

template <typename T>
std::string serialize_archive(const ModelParams<T>& params, const std::string& fingerprint) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for_each_param(params, [&](const std::string& name, const DenseGrid<T>& g) {
    tensors.push_back({{"name", name}, {"shape", g.shape()}, {"offset", payload.size()}});
    for (const T v : g.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      detail::put_u32(payload, bits);
    }
  });
  const nlohmann::json manifest{
      {"format_version", kArchiveVersion}, {"config_fingerprint", fingerprint}, {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::string out(kArchiveMagic, 4);
  detail::put_u32(out, kArchiveVersion);
  detail::put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

/// Fills every parameter declared by `cfg` from the archive. Refuses a
/// fingerprint mismatch, missing or surplus tensors and shape mismatches.
template <typename T>
ModelParams<T> deserialize_archive(const std::string& bytes, const ModelConfig& cfg) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0) {
    throw ArchiveError("not a weight archive (bad magic)");
  }
  const auto version = detail::get_le(bytes, 4, 4);
  if (version != kArchiveVersion) {
    throw ArchiveError("unsupported archive version " + std::to_string(version));
  }
  const auto mlen = detail::get_le(bytes, 8, 8);
  if (mlen > bytes.size() - 16) throw ArchiveError("truncated archive manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("corrupt archive manifest: ") + e.what());
  }
  const std::string expected = config_fingerprint(cfg);
  const std::string found = manifest.value("config_fingerprint", std::string{});
  if (found != expected) {
    throw ArchiveError("config fingerprint mismatch: archive " + found + ", config " + expected);
  }
  const std::size_t payload_start = 16 + mlen;
  const std::size_t payload_size = bytes.size() - payload_start;

  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;
  try {
    for (const auto& t : manifest.at("tensors")) {
      entries[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(),
                                                  t.at("offset").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("corrupt archive manifest: ") + e.what());
  }

  auto params = make_model_params<T>(cfg, 0);
  std::size_t used = 0;
  for_each_param(params, [&](const std::string& name, DenseGrid<T>& g) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw ArchiveError("archive is missing parameter " + name);
    if (it->second.shape != g.shape()) {
      throw ArchiveError("parameter " + name + " has shape " + shape_string(it->second.shape) +
                         ", model expects " + shape_string(g.shape()));
    }
    const std::size_t off = it->second.offset;
    if (off % 4 != 0 || off > payload_size || (payload_size - off) / 4 < g.size()) {
      throw ArchiveError("parameter " + name + " lies outside the payload");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes, payload_start + off + 4 * i, 4));
      g[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
    ++used;
  });
  if (used != entries.size()) {
    for (const auto& [name, e] : entries) {
      bool known = false;
      for_each_param(params, [&](const std::string& n, const DenseGrid<T>&) { known |= n == name; });
      if (!known) throw ArchiveError("archive holds unknown parameter " + name);
    }
  }
  return params;
}

template <typename T>
void save_archive(const std::filesystem::path& path, const ModelParams<T>& params,
                  const ModelConfig& cfg) {
  const auto bytes = serialize_archive(params, config_fingerprint(cfg));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError("write failed for " + path.string());
}

template <typename T>
ModelParams<T> load_archive(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_archive<T>(bytes, cfg);
  } catch (const ArchiveError& e) {
    throw ArchiveError(path.string() + ": " + e.what());
  }
}

}  // namespace hvnet
