// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "hqf/errors.hpp"
#include "hqf/numkernel.hpp"
#include "hqf/queries.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

/// Cross-type mask: open on the diagonal and between queries of different
/// types, blocked between distinct queries of the same type.
inline AttentionMask build_cross_type_mask(std::span<const QueryType> types) {
  const std::size_t n = types.size();
  AttentionMask mask(n, n, Gate::open);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && types[i] == types[j]) mask.set(i, j, Gate::blocked);
    }
  }
  return mask;
}

/// Pre-norm position-wise MLP (d → 4d → d) with a residual connection.
struct FfnWeights {
  Matrix norm_gamma, norm_beta, w1, b1, w2, b2;

  static FfnWeights zeros(std::size_t d) {
    return {Matrix(1, d, 1.0), Matrix(1, d), Matrix(4 * d, d), Matrix(1, 4 * d), Matrix(d, 4 * d), Matrix(1, d)};
  }
};

inline Matrix ffn_block(const Matrix& x, const FfnWeights& w) {
  Matrix hidden = linear(layer_norm(x, w.norm_gamma, w.norm_beta), w.w1, w.b1);
  for (double& v : hidden.data()) v = relu(v);
  return add(x, linear(hidden, w.w2, w.b2));
}

struct QmixResult {
  Matrix queries;  ///< N×d after attention and MLP.
  Matrix attn;     ///< N×N head-averaged weights.
};

/// Masked cross-type attention followed by the MLP:
/// H = Q + MHA(Q, Q, Q; M), Q' = H + MLP(LN(H)).
inline QmixResult qmix_attention(const Matrix& q, std::span<const QueryType> types, const MhaWeights& mha,
                                 const FfnWeights& ffn, std::size_t heads) {
  if (types.size() != q.rows()) throw DimensionError("qmix: types length does not match query count");
  const AttentionMask mask = build_cross_type_mask(types);
  auto res = multi_head_attention(q, q, q, mask, mha, heads);
  return {ffn_block(add(q, res.out), ffn), std::move(res.attn)};
}

// ---------------------------------------------------------------------------
// Diagnostics

using TypeMatrix = std::array<std::array<double, kNumQueryTypes>, kNumQueryTypes>;

struct TypeAttentionStats {
  TypeMatrix mass{};          ///< [source type][key type], averaged over source rows.
  TypeMatrix mean_per_key{};  ///< mass divided by the key-type count.
};

inline std::array<std::size_t, kNumQueryTypes> type_counts(std::span<const QueryType> types) {
  std::array<std::size_t, kNumQueryTypes> n{};
  for (auto t : types) ++n[index_of(t)];
  return n;
}

/// Type-to-type attention mass and mean per-key weight. Absent types give
/// zero rows and columns.
inline TypeAttentionStats attention_type_stats(const Matrix& attn, std::span<const QueryType> types) {
  if (attn.rows() != types.size() || attn.cols() != types.size()) {
    throw DimensionError("attention stats: matrix " + shape_str(attn) + " for " + std::to_string(types.size()) + " types");
  }
  const auto counts = type_counts(types);
  TypeAttentionStats s;
  for (std::size_t i = 0; i < types.size(); ++i) {
    const std::size_t a = index_of(types[i]);
    auto row = attn.row(i);
    for (std::size_t j = 0; j < types.size(); ++j) s.mass[a][index_of(types[j])] += row[j];
  }
  for (std::size_t a = 0; a < kNumQueryTypes; ++a) {
    for (std::size_t b = 0; b < kNumQueryTypes; ++b) {
      if (counts[a] == 0) {
        s.mass[a][b] = 0.0;
        continue;
      }
      s.mass[a][b] /= static_cast<double>(counts[a]);
    }
  }
  for (std::size_t a = 0; a < kNumQueryTypes; ++a) {
    for (std::size_t b = 0; b < kNumQueryTypes; ++b) {
      s.mean_per_key[a][b] = counts[b] == 0 ? 0.0 : s.mass[a][b] / static_cast<double>(counts[b]);
    }
  }
  return s;
}

/// Element-wise mean of several stats records.
inline TypeAttentionStats mean_stats(std::span<const TypeAttentionStats> all) {
  TypeAttentionStats m;
  if (all.empty()) return m;
  for (const auto& s : all) {
    for (std::size_t a = 0; a < kNumQueryTypes; ++a) {
      for (std::size_t b = 0; b < kNumQueryTypes; ++b) {
        m.mass[a][b] += s.mass[a][b];
        m.mean_per_key[a][b] += s.mean_per_key[a][b];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(all.size());
  for (auto& row : m.mass) for (double& v : row) v *= inv;
  for (auto& row : m.mean_per_key) for (double& v : row) v *= inv;
  return m;
}

struct CrossTypeLink {
  std::size_t source = 0;
  std::size_t target = 0;
  double weight = 0.0;
  QueryType source_type = QueryType::img;
  QueryType target_type = QueryType::img;
  double source_confidence = 0.0;
};

/// For each query with confidence above the threshold, its k strongest
/// positive-weight links to queries of a different type. Ties go to the
/// lower target index.
inline std::vector<CrossTypeLink> extract_top_links(const Matrix& attn, std::span<const QueryType> types,
                                                    std::span<const double> confidences, double conf_threshold = 0.1,
                                                    std::size_t k = 2) {
  const std::size_t n = types.size();
  if (attn.rows() != n || attn.cols() != n || confidences.size() != n) {
    throw DimensionError("links: attention, types and confidences disagree in size");
  }
  std::vector<CrossTypeLink> links;
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(confidences[i] > conf_threshold)) continue;
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (types[j] != types[i] && attn(i, j) > 0.0) cand.push_back(j);
    }
    const std::size_t take = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (attn(i, a) != attn(i, b)) return attn(i, a) > attn(i, b);
                        return a < b;
                      });
    for (std::size_t t = 0; t < take; ++t) {
      links.push_back({i, cand[t], attn(i, cand[t]), types[i], types[cand[t]], confidences[i]});
    }
  }
  return links;
}

}  // namespace hqf
