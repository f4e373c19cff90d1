// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqf/errors.hpp"

namespace hqf {

/// Container used for weight files and feature dumps: a compact UTF-8 JSON
/// header, a blank line ("\n\n"), then little-endian float32 values.
struct FloatContainer {
  nlohmann::json header;
  std::vector<float> values;
};

inline void append_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float read_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::string encode_container(const nlohmann::json& header, std::span<const float> values) {
  std::string out = header.dump();
  out += "\n\n";
  out.reserve(out.size() + 4 * values.size());
  for (float v : values) append_le(out, v);
  return out;
}

inline void write_container(const std::string& path, const nlohmann::json& header, std::span<const float> values) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_container(header, values);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write to '" + path + "' failed");
}

inline FloatContainer decode_container(const std::string& bytes) {
  const auto sep = bytes.find("\n\n");
  if (sep == std::string::npos) throw FormatError("container: missing header separator");
  FloatContainer out;
  try {
    out.header = nlohmann::json::parse(bytes.substr(0, sep));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: bad header: ") + e.what());
  }
  const std::size_t blob = bytes.size() - sep - 2;
  if (blob % 4 != 0) throw FormatError("container: blob length is not a multiple of 4 bytes");
  out.values.resize(blob / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + sep + 2);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = read_le(p + 4 * i);
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline FloatContainer read_container(const std::string& path) { return decode_container(read_file(path)); }

}  // namespace hqf
