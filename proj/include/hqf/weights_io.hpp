// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hqf/blob_io.hpp"
#include "hqf/decoder.hpp"
#include "hqf/errors.hpp"
#include "hqf/rng.hpp"

namespace hqf {

inline constexpr int kWeightFormatVersion = 1;

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of every config field that determines tensor shapes or their use.
inline std::string config_hash(const DecoderConfig& cfg) {
  const std::string key = "dim=" + std::to_string(cfg.dim) + ";heads=" + std::to_string(cfg.heads) +
                          ";classes=" + std::to_string(cfg.num_classes) + ";k_base=" + std::to_string(cfg.qswap.k_base) +
                          ";k_pv=" + std::to_string(cfg.k_pv);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

/// Seeded initialization: linear weights ~ U(±1/√fan_in), biases zero, type
/// embeddings ~ N(0, 0.02), norm gains one, sampling ranges at their defaults.
/// Values are rounded to float32 so that the file round-trip is exact.
inline DecoderWeights init_weights(std::uint64_t seed, const DecoderConfig& cfg) {
  cfg.validate();
  DecoderWeights w = DecoderWeights::zeros(cfg);
  w.for_each([&](const std::string& name, Matrix& m) {
    Rng rng = Rng::stream(seed, fnv1a(name));
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (name == "type_embedding") {
      for (double& v : m.data()) v = static_cast<float>(rng.normal(0.0, 0.02));
    } else if (ends_with("gamma") || ends_with("beta") || ends_with("range") || m.rows() == 1) {
      // Keep the structural defaults from zeros(): gains 1, shifts and biases 0.
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (double& v : m.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
  });
  return w;
}

inline nlohmann::json weight_manifest(const DecoderWeights& w, const DecoderConfig& cfg) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  w.for_each([&](const std::string& name, const Matrix& m) {
    const std::size_t bytes = 4 * m.size();
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"length", bytes}});
    offset += bytes;
  });
  return {{"format", "cfw"},
          {"version", kWeightFormatVersion},
          {"config_hash", config_hash(cfg)},
          {"byte_order", "little"},
          {"tensors", std::move(tensors)}};
}

inline std::string encode_weights(const DecoderWeights& w, const DecoderConfig& cfg) {
  std::vector<float> blob;
  w.for_each([&](const std::string&, const Matrix& m) {
    for (double v : m.data()) blob.push_back(static_cast<float>(v));
  });
  return encode_container(weight_manifest(w, cfg), blob);
}

inline void save_weights(const DecoderWeights& w, const DecoderConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_weights(w, cfg);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write to '" + path + "' failed");
}

/// Parses a weight file image and validates it against `cfg`. Any mismatch
/// in config hash, tensor names, shapes or blob coverage is a FormatError.
inline DecoderWeights decode_weights(const std::string& bytes, const DecoderConfig& cfg) {
  cfg.validate();
  const FloatContainer c = decode_container(bytes);
  const auto& h = c.header;
  try {
    if (h.at("format") != "cfw") throw FormatError("weights: not a cfw file");
    if (h.at("version") != kWeightFormatVersion) throw FormatError("weights: unsupported version");
    if (h.at("config_hash") != config_hash(cfg)) throw FormatError("weights: file was written for a different config");
    std::map<std::string, nlohmann::json> entries;
    for (const auto& t : h.at("tensors")) {
      const std::string name = t.at("name");
      if (!entries.emplace(name, t).second) throw FormatError("weights: duplicate tensor '" + name + "'");
    }
    DecoderWeights w = DecoderWeights::zeros(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t visited = 0;
    w.for_each([&](const std::string& name, Matrix& m) {
      auto it = entries.find(name);
      if (it == entries.end()) throw FormatError("weights: missing tensor '" + name + "'");
      const auto& t = it->second;
      const std::size_t rows = t.at("shape").at(0), cols = t.at("shape").at(1);
      if (rows != m.rows() || cols != m.cols()) {
        throw FormatError("weights: tensor '" + name + "' has shape (" + std::to_string(rows) + "x" +
                          std::to_string(cols) + "), config expects " + shape_str(m));
      }
      if (t.at("dtype") != "float32") throw FormatError("weights: tensor '" + name + "' is not float32");
      const std::size_t offset = t.at("offset"), length = t.at("length");
      if (length != 4 * m.size() || offset % 4 != 0 || offset + length > 4 * c.values.size()) {
        throw FormatError("weights: tensor '" + name + "' lies outside the blob");
      }
      for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = c.values[offset / 4 + k];
      ranges.emplace_back(offset, length);
      ++visited;
    });
    if (visited != entries.size()) throw FormatError("weights: file has unexpected extra tensors");
    std::sort(ranges.begin(), ranges.end());
    std::size_t end = 0;
    for (const auto& [offset, length] : ranges) {
      if (offset != end) throw FormatError("weights: tensor ranges overlap or leave gaps");
      end = offset + length;
    }
    if (end != 4 * c.values.size()) throw FormatError("weights: blob length does not match the manifest");
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weights: malformed manifest: ") + e.what());
  }
}

inline DecoderWeights load_weights(const std::string& path, const DecoderConfig& cfg) {
  return decode_weights(read_file(path), cfg);
}

}  // namespace hqf
