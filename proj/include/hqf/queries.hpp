// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "hqf/camera.hpp"
#include "hqf/errors.hpp"
#include "hqf/grid.hpp"
#include "hqf/rng.hpp"
#include "hqf/scene.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

/// Query source. The numeric order is also the block order after concatenation.
enum class QueryType : std::uint8_t { img = 0, rad = 1, world = 2 };

inline constexpr std::size_t kNumQueryTypes = 3;
inline constexpr std::array<QueryType, 3> kQueryTypes{QueryType::img, QueryType::rad, QueryType::world};

inline std::string_view to_string(QueryType t) {
  switch (t) {
    case QueryType::img: return "img";
    case QueryType::rad: return "rad";
    case QueryType::world: return "w";
  }
  return "?";
}

inline QueryType query_type_from_string(std::string_view s) {
  if (s == "img") return QueryType::img;
  if (s == "rad") return QueryType::rad;
  if (s == "w" || s == "world") return QueryType::world;
  throw FormatError("unknown query type '" + std::string(s) + "'");
}

inline std::size_t index_of(QueryType t) { return static_cast<std::size_t>(t); }

/// Intermediate box extent and heading carried by each query.
struct BoxState {
  double w = 2.0;
  double l = 4.0;
  double h = 1.5;
  double yaw = 0.0;
  friend bool operator==(const BoxState&, const BoxState&) = default;
};

struct QuerySet {
  Matrix embeddings;  ///< N×d
  std::vector<Vec3> positions;
  std::vector<QueryType> types;
  std::vector<double> init_scores;
  std::vector<BoxState> boxes;

  std::size_t size() const { return types.size(); }
  std::size_t dim() const { return embeddings.cols(); }

  void validate() const {
    const std::size_t n = types.size();
    if (embeddings.rows() != n || positions.size() != n || init_scores.size() != n || boxes.size() != n) {
      throw DimensionError("query set: inconsistent lengths");
    }
  }

  static QuerySet empty(std::size_t d) {
    QuerySet q;
    q.embeddings = Matrix(0, d);
    return q;
  }
};

inline Vec3 clamp_to_extent(Vec3 p, double extent) {
  p[0] = std::clamp(p[0], -extent, extent);
  p[1] = std::clamp(p[1], -extent, extent);
  return p;
}

// ---------------------------------------------------------------------------
// World queries

struct RingConfig {
  int rings = 15;
  double max_radius = 51.2;
};

/// Number of queries per ring: proportional to ring radius k·R_max/R, rounded
/// by largest remainder so the total is exact. Remainder ties go to the
/// outer ring, which keeps the counts non-decreasing.
inline std::vector<int> ring_counts(int total, int rings) {
  if (rings < 1) throw ConfigError("world queries: ring count must be >= 1");
  if (total < rings) {
    throw ConfigError("world queries: " + std::to_string(total) + " queries cannot fill " +
                      std::to_string(rings) + " rings");
  }
  // Radii are k·(R_max/R); the common factor cancels, so the quota total·k/Σk
  // is a rational number and remainders compare exactly in integers.
  const long long radius_sum = static_cast<long long>(rings) * (rings + 1) / 2;
  std::vector<int> counts(static_cast<std::size_t>(rings));
  std::vector<long long> remainder(static_cast<std::size_t>(rings));
  int assigned = 0;
  for (int k = 1; k <= rings; ++k) {
    const long long scaled = static_cast<long long>(total) * k;
    counts[k - 1] = static_cast<int>(scaled / radius_sum);
    remainder[k - 1] = scaled % radius_sum;
    assigned += counts[k - 1];
  }
  std::vector<int> order(static_cast<std::size_t>(rings));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return a > b;
  });
  for (int i = 0; i < total - assigned; ++i) ++counts[order[static_cast<std::size_t>(i)]];
  return counts;
}

/// World queries on concentric rings with density growing with range.
inline QuerySet init_world_queries(int count, double extent, const RingConfig& rings, std::size_t d,
                                   std::uint64_t seed, const BoxState& prior = {}) {
  if (count < 1) throw ConfigError("world queries: count must be >= 1");
  const auto counts = ring_counts(count, rings.rings);
  Rng rng = Rng::stream(seed, salt::world_queries);
  QuerySet q;
  q.embeddings = Matrix(static_cast<std::size_t>(count), d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : q.embeddings.data()) v = rng.normal(0.0, sd);
  for (int k = 1; k <= rings.rings; ++k) {
    const double radius = k * rings.max_radius / rings.rings;
    const double phase = k * std::numbers::pi / rings.rings;
    const int n = counts[k - 1];
    for (int m = 0; m < n; ++m) {
      const double angle = phase + 2.0 * std::numbers::pi * m / n;
      q.positions.push_back(clamp_to_extent({radius * std::cos(angle), radius * std::sin(angle), 0.0}, extent));
      q.types.push_back(QueryType::world);
      q.init_scores.push_back(1.0);
      q.boxes.push_back(prior);
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// Image queries

struct Proposal {
  std::size_t view = 0;
  double u = 0.0;
  double v = 0.0;
  double score = 0.0;
  double depth = 0.0;  ///< Noisy depth estimate in meters.
  Vector pv_feature;
  int object_id = -1;  ///< −1 for distractors.
};

struct ProposalConfig {
  int per_view = 50;
  double center_noise_px = 4.0;
  double depth_noise = 1.0;
  double score_jitter = 0.02;
};

/// Oracle score model for a true object seen at `depth` meters, before jitter.
inline double proposal_base_score(double depth) { return 0.9 * std::exp(-depth / 60.0); }

/// Stand-in 2D detector. Visible objects give proposals at their projected
/// centers (plus pixel noise) scored by proposal_base_score; free slots are
/// filled with low-score distractors.
inline std::vector<std::vector<Proposal>> generate_2d_proposals(const Scene& scene,
                                                                const std::vector<PvFeatureMap>& pv,
                                                                const ProposalConfig& cfg, std::uint64_t seed) {
  if (cfg.per_view < 0) throw ConfigError("proposals: per_view must be >= 0");
  if (pv.size() != scene.rig.cameras.size()) throw DimensionError("proposals: one PV map per camera required");
  Rng rng = Rng::stream(seed, salt::proposals);
  std::vector<std::vector<Proposal>> out(scene.rig.cameras.size());
  for (std::size_t view = 0; view < scene.rig.cameras.size(); ++view) {
    const Camera& cam = scene.rig.cameras[view];
    auto& list = out[view];
    for (const auto& o : scene.objects) {
      auto proj = project_to_view(o.center, cam);
      if (!proj) continue;
      Proposal p;
      p.view = view;
      p.u = std::clamp(proj->u + rng.normal(0.0, cfg.center_noise_px), 0.0, std::nextafter(static_cast<double>(cam.width), 0.0));
      p.v = std::clamp(proj->v + rng.normal(0.0, cfg.center_noise_px), 0.0, std::nextafter(static_cast<double>(cam.height), 0.0));
      p.depth = std::max(2.0 * kMinDepth, proj->depth + rng.normal(0.0, cfg.depth_noise));
      p.score = std::clamp(proposal_base_score(proj->depth) + rng.uniform(-cfg.score_jitter, cfg.score_jitter), 0.0, 1.0);
      p.object_id = o.id;
      list.push_back(std::move(p));
    }
    std::stable_sort(list.begin(), list.end(), [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    if (list.size() > static_cast<std::size_t>(cfg.per_view)) list.resize(static_cast<std::size_t>(cfg.per_view));
    while (list.size() < static_cast<std::size_t>(cfg.per_view)) {
      Proposal p;
      p.view = view;
      p.u = rng.uniform(0.0, cam.width);
      p.v = rng.uniform(0.0, cam.height);
      p.depth = rng.uniform(5.0, 60.0);
      p.score = rng.uniform(0.0, 0.2);
      list.push_back(std::move(p));
    }
    for (auto& p : list) p.pv_feature = sample_pv(pv[view], p.u, p.v);
  }
  return out;
}

struct ImageQueryInit {
  QuerySet queries;
  std::size_t padded = 0;  ///< Zero-score filler queries added at the origin.
};

/// Global top-N proposals (ties keep view-major order) lifted to 3D at their
/// estimated depth.
inline ImageQueryInit init_image_queries(const std::vector<std::vector<Proposal>>& proposals, const CameraRig& rig,
                                         int count, std::size_t d, double extent, const BoxState& prior = {}) {
  if (count < 0) throw ConfigError("image queries: count must be >= 0");
  std::vector<const Proposal*> all;
  for (const auto& view : proposals) {
    for (const auto& p : view) all.push_back(&p);
  }
  std::stable_sort(all.begin(), all.end(), [](const Proposal* a, const Proposal* b) { return a->score > b->score; });
  ImageQueryInit out;
  QuerySet& q = out.queries;
  q.embeddings = Matrix(static_cast<std::size_t>(count), d);
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    if (i < all.size()) {
      const Proposal& p = *all[i];
      if (p.pv_feature.size() != d) throw DimensionError("image queries: proposal feature width mismatch");
      std::copy(p.pv_feature.begin(), p.pv_feature.end(), q.embeddings.row(i).begin());
      q.positions.push_back(clamp_to_extent(back_project(rig.cameras.at(p.view), p.u, p.v, p.depth), extent));
      q.init_scores.push_back(p.score);
    } else {
      q.positions.push_back({0, 0, 0});
      q.init_scores.push_back(0.0);
      ++out.padded;
    }
    q.types.push_back(QueryType::img);
    q.boxes.push_back(prior);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Radar queries

/// Indices of the `count` largest heatmap cells; ties by row-major index.
inline std::vector<std::size_t> top_cells(std::span<const double> heatmap, std::size_t count) {
  if (count > heatmap.size()) throw ConfigError("radar queries: more queries than heatmap cells");
  std::vector<std::size_t> idx(heatmap.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    if (heatmap[a] != heatmap[b]) return heatmap[a] > heatmap[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), better);
  idx.resize(count);
  return idx;
}

/// Radar queries at the top heatmap cells. Box state stays at the prior; the
/// heatmap only provides a confidence.
inline QuerySet init_radar_queries(std::span<const double> heatmap, const FeatureGrid& radar_grid, int count,
                                   const BoxState& prior = {}) {
  if (count < 0) throw ConfigError("radar queries: count must be >= 0");
  if (heatmap.size() != radar_grid.height * radar_grid.width) throw DimensionError("radar queries: heatmap/grid mismatch");
  const auto cells = top_cells(heatmap, static_cast<std::size_t>(count));
  QuerySet q;
  q.embeddings = Matrix(cells.size(), radar_grid.dim);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::size_t r = cells[i] / radar_grid.width, c = cells[i] % radar_grid.width;
    auto feat = radar_grid.cell(r, c);
    std::copy(feat.begin(), feat.end(), q.embeddings.row(i).begin());
    q.positions.push_back(radar_grid.cell_center(r, c));
    q.types.push_back(QueryType::rad);
    q.init_scores.push_back(heatmap[cells[i]]);
    q.boxes.push_back(prior);
  }
  return q;
}

/// Concatenates (img, rad, world) blocks in that order.
inline QuerySet concat_query_sets(const QuerySet& img, const QuerySet& rad, const QuerySet& world) {
  std::size_t d = 0;
  for (const QuerySet* s : {&img, &rad, &world}) {
    s->validate();
    if (s->size() == 0) continue;
    if (d != 0 && s->dim() != d) throw DimensionError("concat: query widths differ");
    d = s->dim();
  }
  if (d == 0) d = std::max({img.dim(), rad.dim(), world.dim()});
  QuerySet out;
  std::vector<double> data;
  for (const QuerySet* s : {&img, &rad, &world}) {
    data.insert(data.end(), s->embeddings.data().begin(), s->embeddings.data().end());
    out.positions.insert(out.positions.end(), s->positions.begin(), s->positions.end());
    out.types.insert(out.types.end(), s->types.begin(), s->types.end());
    out.init_scores.insert(out.init_scores.end(), s->init_scores.begin(), s->init_scores.end());
    out.boxes.insert(out.boxes.end(), s->boxes.begin(), s->boxes.end());
  }
  out.embeddings = Matrix(out.types.size(), d, std::move(data));
  return out;
}

}  // namespace hqf
