// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hqf/errors.hpp"
#include "hqf/grid.hpp"
#include "hqf/numkernel.hpp"
#include "hqf/queries.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

enum class SampleOrigin : std::uint8_t { base, shared };

inline std::string_view to_string(SampleOrigin o) { return o == SampleOrigin::base ? "base" : "shared"; }

/// One deformable sampling point. The offset is relative to the owner's BEV
/// position; `source` is the query that predicted it.
struct SamplePoint {
  std::array<double, 2> offset{0, 0};
  double score = 0.0;
  std::size_t owner = 0;
  SampleOrigin origin = SampleOrigin::base;
  std::size_t source = 0;
  GridKind grid = GridKind::img_bev;
};

struct SampleSet {
  std::vector<SamplePoint> points;
  std::vector<double> weights;  ///< Filled by normalize_sample_scores.
};

enum class QSwapMode { append, replace };

inline std::string_view to_string(QSwapMode m) { return m == QSwapMode::append ? "append" : "replace"; }

inline QSwapMode qswap_mode_from_string(std::string_view s) {
  if (s == "append") return QSwapMode::append;
  if (s == "replace") return QSwapMode::replace;
  throw ConfigError("qswap: unknown mode '" + std::string(s) + "' (expected append or replace)");
}

struct QSwapConfig {
  double alpha = 1.5;
  double lambda = 1.0;
  std::size_t num_neighbors = 4;
  std::size_t k_base = 20;
  std::size_t k_per = 2;
  std::size_t k_extra = 4;
  QSwapMode mode = QSwapMode::append;
  double affinity_floor = 1e-8;
  std::optional<double> fixed_radius;  ///< Overrides the box-adaptive radius when set.

  void validate() const {
    if (k_per > k_extra) throw ConfigError("qswap: k_per must not exceed k_extra");
    if (k_base == 0) throw ConfigError("qswap: k_base must be >= 1");
    if (mode == QSwapMode::replace && k_extra > k_base) throw ConfigError("qswap: replace mode needs k_extra <= k_base");
    if (!(alpha >= 0.0) || !(lambda >= 0.0)) throw ConfigError("qswap: alpha and lambda must be >= 0");
    if (!(affinity_floor > 0.0)) throw ConfigError("qswap: affinity_floor must be positive");
    if (fixed_radius && !(*fixed_radius >= 0.0)) throw ConfigError("qswap: fixed_radius must be >= 0");
  }
};

/// Linear head producing K (dx, dy, score) triples; offsets are scaled by `range` (meters).
struct SamplingHead {
  Matrix w;      ///< 3K×d
  Matrix b;      ///< 1×3K
  Matrix range;  ///< 1×1

  static SamplingHead zeros(std::size_t k, std::size_t d, double range) {
    return {Matrix(3 * k, d), Matrix(1, 3 * k), Matrix(1, 1, range)};
  }
  std::size_t points() const { return w.rows() / 3; }
};

inline std::vector<SamplePoint> predict_base_samples(std::span<const double> embedding, const SamplingHead& head,
                                                     GridKind grid, std::size_t owner) {
  const Vector raw = affine(embedding, head.w, head.b.data());
  const double range = head.range.data().at(0);
  std::vector<SamplePoint> pts(head.points());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    pts[k] = {{range * raw[3 * k], range * raw[3 * k + 1]}, raw[3 * k + 2], owner, SampleOrigin::base, owner, grid};
  }
  return pts;
}

inline double query_radius(const BoxState& box, const QSwapConfig& cfg) {
  if (cfg.fixed_radius) return *cfg.fixed_radius;
  return cfg.alpha * std::hypot(box.w, box.l);
}

/// Top-N affinity partners of query i (self excluded, ties by lower id),
/// kept only when their BEV center lies within the query's radius.
inline std::vector<std::size_t> select_neighbors(std::size_t i, std::span<const double> affinity_row,
                                                 std::span<const BoxState> boxes, std::span<const Vec3> positions,
                                                 const QSwapConfig& cfg) {
  const std::size_t n = affinity_row.size();
  if (boxes.size() != n || positions.size() != n || i >= n) throw DimensionError("select_neighbors: size mismatch");
  std::vector<std::size_t> cand;
  cand.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) cand.push_back(j);
  }
  const std::size_t take = std::min(cfg.num_neighbors, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (affinity_row[a] != affinity_row[b]) return affinity_row[a] > affinity_row[b];
                      return a < b;
                    });
  cand.resize(take);
  const double radius = query_radius(boxes[i], cfg);
  std::erase_if(cand, [&](std::size_t j) { return distance_xy(positions[i], positions[j]) > radius; });
  return cand;
}

/// Ranking score of a neighbor-sourced point: s + λ·log(max(a, floor)).
inline double score_shared_points(double score, double affinity, double lambda, double affinity_floor = 1e-8) {
  return score + lambda * std::log(std::max(affinity, affinity_floor));
}

struct SwapCandidate {
  std::size_t neighbor = 0;
  std::size_t point = 0;  ///< Index into the neighbor's base set.
  double ranked_score = 0.0;
};

/// Greedy acceptance in descending ranked score under a per-neighbor cap and
/// a total cap. Returns indices into `pool` in acceptance order.
inline std::vector<std::size_t> accept_shared(std::span<const SwapCandidate> pool, std::size_t k_per,
                                              std::size_t k_extra) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = pool[a];
    const auto& y = pool[b];
    if (x.ranked_score != y.ranked_score) return x.ranked_score > y.ranked_score;
    if (x.neighbor != y.neighbor) return x.neighbor < y.neighbor;
    return x.point < y.point;
  });
  std::vector<std::size_t> accepted;
  std::map<std::size_t, std::size_t> taken;
  for (std::size_t idx : order) {
    if (accepted.size() >= k_extra) break;
    auto& used = taken[pool[idx].neighbor];
    if (used >= k_per) continue;
    ++used;
    accepted.push_back(idx);
  }
  return accepted;
}

/// Augments every query's base set (one BEV grid) with points shared by its
/// neighbors. Shared points keep their absolute BEV position and carry the
/// ranked score. Append mode extends the set; replace mode overwrites the
/// lowest-scoring base points so the size stays at K_base.
inline std::vector<SampleSet> swap_samples(std::span<const SampleSet> base, std::span<const Vec3> positions,
                                           std::span<const std::vector<std::size_t>> neighbors,
                                           const Matrix& affinity, const QSwapConfig& cfg) {
  cfg.validate();
  const std::size_t n = base.size();
  if (positions.size() != n || neighbors.size() != n || affinity.rows() != n || affinity.cols() != n) {
    throw DimensionError("swap_samples: size mismatch");
  }
  std::vector<SampleSet> out(base.begin(), base.end());
  std::vector<SwapCandidate> pool;
  for (std::size_t i = 0; i < n; ++i) {
    pool.clear();
    for (std::size_t j : neighbors[i]) {
      const double a = affinity(i, j);
      const auto& pts = base[j].points;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (pts[k].origin != SampleOrigin::base) continue;
        pool.push_back({j, k, score_shared_points(pts[k].score, a, cfg.lambda, cfg.affinity_floor)});
      }
    }
    if (pool.empty()) continue;
    const auto accepted = accept_shared(pool, cfg.k_per, cfg.k_extra);

    std::vector<SamplePoint> shared;
    for (std::size_t idx : accepted) {
      const auto& c = pool[idx];
      const SamplePoint& src = base[c.neighbor].points[c.point];
      SamplePoint p;
      p.offset = {positions[c.neighbor][0] + src.offset[0] - positions[i][0],
                  positions[c.neighbor][1] + src.offset[1] - positions[i][1]};
      p.score = c.ranked_score;
      p.owner = i;
      p.origin = SampleOrigin::shared;
      p.source = c.neighbor;
      p.grid = src.grid;
      shared.push_back(p);
    }

    auto& pts = out[i].points;
    if (cfg.mode == QSwapMode::append) {
      pts.insert(pts.end(), shared.begin(), shared.end());
    } else {
      std::vector<std::size_t> slots(pts.size());
      std::iota(slots.begin(), slots.end(), 0);
      std::stable_sort(slots.begin(), slots.end(),
                       [&](std::size_t a, std::size_t b) { return pts[a].score < pts[b].score; });
      slots.resize(std::min(shared.size(), slots.size()));
      std::sort(slots.begin(), slots.end());
      for (std::size_t t = 0; t < slots.size(); ++t) pts[slots[t]] = shared[t];
    }
    out[i].weights.clear();
  }
  return out;
}

/// Softmax over the raw base scores and shared ranked scores of one set.
inline const std::vector<double>& normalize_sample_scores(SampleSet& set) {
  Vector scores;
  scores.reserve(set.points.size());
  for (const auto& p : set.points) scores.push_back(p.score);
  set.weights = set.points.empty() ? Vector{} : softmax(scores);
  return set.weights;
}

}  // namespace hqf
