// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hqf/camera.hpp"
#include "hqf/errors.hpp"
#include "hqf/grid.hpp"
#include "hqf/rng.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

struct SceneObject {
  int id = 0;
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};  ///< (w, l, h) meters; l runs along the heading.
  double yaw = 0.0;
  std::array<double, 2> velocity{0, 0};
  int class_id = 0;
};

struct SceneConfig {
  double extent = 51.2;  ///< Objects lie in [−extent, extent]².
  int num_objects = 20;
  int num_classes = 10;
  std::size_t feature_dim = 256;
  double min_separation = 2.0;
  RigConfig rig;
};

struct Scene {
  SceneConfig config;
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  std::vector<Vector> signatures;  ///< Unit-norm per-object embedding, same order as objects.
  CameraRig rig;
};

// Salts for independent random streams derived from the scene seed.
namespace salt {
inline constexpr std::uint64_t placement = 1;
inline constexpr std::uint64_t signatures = 2;
inline constexpr std::uint64_t radar = 3;
inline constexpr std::uint64_t pv_noise = 4;
inline constexpr std::uint64_t bev_noise = 5;
inline constexpr std::uint64_t bev_miss = 6;
inline constexpr std::uint64_t proposals = 7;
inline constexpr std::uint64_t world_queries = 8;
}  // namespace salt

namespace detail {
// Nominal (w, l, h) for ten road-scene classes; larger ids wrap around.
inline constexpr std::array<Vec3, 10> kClassSizes{{{1.9, 4.6, 1.7},
                                                   {2.5, 6.9, 2.8},
                                                   {2.8, 6.4, 3.2},
                                                   {2.9, 11.0, 3.5},
                                                   {2.9, 12.0, 3.9},
                                                   {2.5, 0.5, 1.0},
                                                   {0.8, 2.1, 1.5},
                                                   {0.6, 1.7, 1.3},
                                                   {0.7, 0.7, 1.8},
                                                   {0.4, 0.4, 1.1}}};
}  // namespace detail

/// Deterministic synthetic scene: objects uniform in the extent with a minimum
/// pairwise center separation, each carrying a unit-norm signature.
inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.num_objects < 0) throw ConfigError("scene: num_objects must be >= 0");
  if (cfg.num_classes < 1) throw ConfigError("scene: num_classes must be >= 1");
  if (!(cfg.extent > 0.0)) throw ConfigError("scene: extent must be positive");
  if (cfg.feature_dim < 1) throw ConfigError("scene: feature_dim must be >= 1");

  const double side = 2.0 * cfg.extent;
  const double disk = std::numbers::pi * 0.25 * cfg.min_separation * cfg.min_separation;
  // Random sequential packing saturates well below this density.
  if (cfg.num_objects > 0 && cfg.num_objects * disk > 0.5 * (side + cfg.min_separation) * (side + cfg.min_separation)) {
    throw GenerationError("scene: extent too small for " + std::to_string(cfg.num_objects) +
                          " objects at separation " + std::to_string(cfg.min_separation) + " m");
  }

  Scene scene;
  scene.config = cfg;
  scene.seed = seed;
  scene.rig = make_surround_rig(cfg.rig);

  Rng place = Rng::stream(seed, salt::placement);
  Rng sig = Rng::stream(seed, salt::signatures);
  const long max_attempts = 2000L * std::max(cfg.num_objects, 1);
  long attempts = 0;
  while (static_cast<int>(scene.objects.size()) < cfg.num_objects) {
    if (++attempts > max_attempts) {
      throw GenerationError("scene: could not place objects with the requested separation");
    }
    const double x = place.uniform(-cfg.extent, cfg.extent);
    const double y = place.uniform(-cfg.extent, cfg.extent);
    const bool clear = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
      return std::hypot(o.center[0] - x, o.center[1] - y) >= cfg.min_separation;
    });
    if (!clear) continue;

    SceneObject obj;
    obj.id = static_cast<int>(scene.objects.size());
    obj.class_id = static_cast<int>(place.index(static_cast<std::size_t>(cfg.num_classes)));
    const Vec3 nominal = detail::kClassSizes[static_cast<std::size_t>(obj.class_id) % detail::kClassSizes.size()];
    for (int a = 0; a < 3; ++a) obj.size[a] = nominal[a] * place.uniform(0.9, 1.1);
    obj.center = {x, y, 0.5 * obj.size[2]};
    obj.yaw = place.uniform(-std::numbers::pi, std::numbers::pi);
    obj.velocity = {place.normal(0.0, 2.0), place.normal(0.0, 2.0)};
    scene.objects.push_back(obj);
    scene.signatures.push_back(sig.unit_vector(cfg.feature_dim));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Radar

struct RadarPoint {
  Vec3 position{0, 0, 0};
  std::array<double, 2> velocity{0, 0};
  double rcs = 0.0;
  int object_id = -1;  ///< −1 for clutter.
  bool clutter = false;
};

using RadarPointCloud = std::vector<RadarPoint>;

struct RadarConfig {
  int points_per_object = 8;
  double pos_noise = 0.2;
  double vel_noise = 0.1;
  int clutter_count = 30;
};

/// BEV corners of an object's footprint, counter-clockwise.
inline std::array<std::array<double, 2>, 4> footprint(const SceneObject& o) {
  const double c = std::cos(o.yaw), s = std::sin(o.yaw);
  const double hl = 0.5 * o.size[1], hw = 0.5 * o.size[0];
  std::array<std::array<double, 2>, 4> out{};
  const double sx[4] = {1, -1, -1, 1};
  const double sy[4] = {1, 1, -1, -1};
  for (int k = 0; k < 4; ++k) {
    const double lx = sx[k] * hl, ly = sy[k] * hw;
    out[k] = {o.center[0] + c * lx - s * ly, o.center[1] + s * lx + c * ly};
  }
  return out;
}

/// Returns near the sensor-facing edge of each box plus uniform clutter.
inline RadarPointCloud simulate_radar_points(const Scene& scene, std::uint64_t seed, const RadarConfig& cfg) {
  if (cfg.points_per_object < 0 || cfg.clutter_count < 0) throw ConfigError("radar: counts must be >= 0");
  Rng rng = Rng::stream(seed, salt::radar);
  RadarPointCloud cloud;
  for (const auto& o : scene.objects) {
    const auto corners = footprint(o);
    int near_edge = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int e = 0; e < 4; ++e) {
      const auto& a = corners[e];
      const auto& b = corners[(e + 1) % 4];
      const double dist = std::hypot(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]));
      if (dist < best) {
        best = dist;
        near_edge = e;
      }
    }
    const auto& a = corners[near_edge];
    const auto& b = corners[(near_edge + 1) % 4];
    for (int k = 0; k < cfg.points_per_object; ++k) {
      const double t = rng.uniform(0.0, 1.0);
      RadarPoint p;
      p.position = {a[0] + t * (b[0] - a[0]) + rng.normal(0.0, cfg.pos_noise),
                    a[1] + t * (b[1] - a[1]) + rng.normal(0.0, cfg.pos_noise), o.center[2]};
      p.velocity = {o.velocity[0] + rng.normal(0.0, cfg.vel_noise), o.velocity[1] + rng.normal(0.0, cfg.vel_noise)};
      p.rcs = rng.normal(10.0, 2.0);
      p.object_id = o.id;
      cloud.push_back(p);
    }
  }
  const double e = scene.config.extent;
  for (int k = 0; k < cfg.clutter_count; ++k) {
    RadarPoint p;
    p.position = {rng.uniform(-e, e), rng.uniform(-e, e), rng.uniform(0.0, 2.0)};
    p.velocity = {rng.normal(0.0, cfg.vel_noise), rng.normal(0.0, cfg.vel_noise)};
    p.rcs = rng.normal(0.0, 2.0);
    p.clutter = true;
    cloud.push_back(p);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Perspective-view features

struct PvFeatureMap {
  std::size_t camera = 0;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t dim = 0;
  int downsample = 16;
  std::vector<double> data;

  std::span<double> cell(std::size_t r, std::size_t c) { return {data.data() + (r * width + c) * dim, dim}; }
  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return {data.data() + (r * width + c) * dim, dim};
  }
};

struct PvConfig {
  int downsample = 16;
  double noise = 0.1;
};

/// Bilinear lookup at image pixel (u, v); pixels outside the image give zeros.
inline Vector sample_pv(const PvFeatureMap& map, double u, double v) {
  const double ds = map.downsample;
  if (!(u >= 0.0 && u < map.width * ds && v >= 0.0 && v < map.height * ds)) return Vector(map.dim, 0.0);
  return interpolate_cells(map.data, map.height, map.width, map.dim, v / ds - 0.5, u / ds - 0.5);
}

namespace detail {
/// Adds weight·signature with an isotropic Gaussian centered at fractional
/// cell coordinates (fr, fc). Cells further than 4σ are skipped.
inline void splat(std::span<double> data, std::size_t height, std::size_t width, std::size_t dim,
                  double fr, double fc, double sigma, std::span<const double> signature) {
  const double reach = 4.0 * sigma;
  const long r_lo = std::max(0L, static_cast<long>(std::floor(fr - reach)));
  const long r_hi = std::min(static_cast<long>(height) - 1, static_cast<long>(std::ceil(fr + reach)));
  const long c_lo = std::max(0L, static_cast<long>(std::floor(fc - reach)));
  const long c_hi = std::min(static_cast<long>(width) - 1, static_cast<long>(std::ceil(fc + reach)));
  for (long r = r_lo; r <= r_hi; ++r) {
    for (long c = c_lo; c <= c_hi; ++c) {
      const double dr = r - fr, dc = c - fc;
      const double w = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      double* cell = data.data() + (static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)) * dim;
      for (std::size_t k = 0; k < dim; ++k) cell[k] += w * signature[k];
    }
  }
}

inline void add_noise(std::span<double> data, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (double& v : data) v += rng.normal(0.0, sigma);
}
}  // namespace detail

/// Per-camera feature maps: Gaussian background noise plus each visible
/// object's signature splatted (σ = 1.5 cells) at its projected center.
inline std::vector<PvFeatureMap> render_pv_features(const Scene& scene, const PvConfig& cfg) {
  if (cfg.downsample < 1) throw ConfigError("pv: downsample must be >= 1");
  Rng rng = Rng::stream(scene.seed, salt::pv_noise);
  const std::size_t d = scene.config.feature_dim;
  std::vector<PvFeatureMap> maps;
  for (std::size_t v = 0; v < scene.rig.cameras.size(); ++v) {
    const Camera& cam = scene.rig.cameras[v];
    PvFeatureMap m;
    m.camera = v;
    m.downsample = cfg.downsample;
    m.height = std::max<std::size_t>(1, static_cast<std::size_t>(cam.height / cfg.downsample));
    m.width = std::max<std::size_t>(1, static_cast<std::size_t>(cam.width / cfg.downsample));
    m.dim = d;
    m.data.assign(m.height * m.width * d, 0.0);
    detail::add_noise(m.data, cfg.noise, rng);
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      auto proj = project_to_view(scene.objects[i].center, cam);
      if (!proj) continue;
      detail::splat(m.data, m.height, m.width, d, proj->v / cfg.downsample - 0.5, proj->u / cfg.downsample - 0.5,
                    1.5, scene.signatures[i]);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

// ---------------------------------------------------------------------------
// BEV features

struct ImageBevConfig {
  double noise = 0.1;
  double miss_rate = 0.2;  ///< Fraction of objects left out of the image BEV.
};

/// Ids of the objects dropped from the image BEV: round(miss_rate·n) of them,
/// chosen by a seeded shuffle.
inline std::vector<int> image_bev_omitted(const Scene& scene, double miss_rate) {
  if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) throw ConfigError("image bev: miss_rate must be in [0, 1]");
  std::vector<int> ids;
  for (const auto& o : scene.objects) ids.push_back(o.id);
  Rng rng = Rng::stream(scene.seed, salt::bev_miss);
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  ids.resize(static_cast<std::size_t>(std::lround(miss_rate * static_cast<double>(ids.size()))));
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline Vec3 to_fractional_cell(const GridConfig& g, double x, double y) {
  return {(y - g.y_min) / g.voxel - 0.5, (x - g.x_min) / g.voxel - 0.5, 0.0};
}

/// Image BEV stand-in: signature splats (σ = 1 cell) at object BEV centers
/// over Gaussian noise, with a seeded subset of objects omitted.
inline FeatureGrid render_image_bev(const Scene& scene, const GridConfig& layout, const ImageBevConfig& cfg) {
  FeatureGrid grid(layout, scene.config.feature_dim, GridKind::img_bev);
  Rng rng = Rng::stream(scene.seed, salt::bev_noise);
  detail::add_noise(grid.data, cfg.noise, rng);
  const auto omitted = image_bev_omitted(scene, cfg.miss_rate);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (std::binary_search(omitted.begin(), omitted.end(), o.id)) continue;
    const Vec3 f = to_fractional_cell(layout, o.center[0], o.center[1]);
    detail::splat(grid.data, grid.height, grid.width, grid.dim, f[0], f[1], 1.0, scene.signatures[i]);
  }
  return grid;
}

inline constexpr std::size_t kRadarCellFeatures = 7;
inline constexpr std::uint64_t kRadarEmbedSeed = 0x5eed;

/// Fixed d×7 embedding applied to per-cell radar statistics.
inline Matrix radar_embedding_matrix(std::size_t d, std::uint64_t seed = kRadarEmbedSeed) {
  Rng rng(seed);
  Matrix e(d, kRadarCellFeatures);
  const double sd = 1.0 / std::sqrt(static_cast<double>(kRadarCellFeatures));
  for (double& v : e.data()) v = rng.normal(0.0, sd);
  return e;
}

struct RadarBev {
  FeatureGrid grid;
  std::vector<double> heatmap;  ///< H×W, row-major, in [0, 1].
  std::vector<int> counts;      ///< Points per cell before smoothing.
  std::vector<double> stats;    ///< H×W×7 per-cell statistics before embedding.
};

/// Cell index of a metric point, or nullopt outside the grid. Points on the
/// upper boundary fall into the last cell.
inline std::optional<std::pair<std::size_t, std::size_t>> locate_cell(const FeatureGrid& g, double x, double y) {
  if (!g.contains(x, y)) return std::nullopt;
  auto c = static_cast<std::size_t>(std::floor((x - g.layout.x_min) / g.layout.voxel));
  auto r = static_cast<std::size_t>(std::floor((y - g.layout.y_min) / g.layout.voxel));
  return std::pair{std::min(r, g.height - 1), std::min(c, g.width - 1)};
}

/// Pillar-style radar encoding. Each occupied cell holds the mean of
/// (x offset in cell, y offset in cell, z, vx, vy, rcs) plus the point count,
/// embedded to d by a fixed seeded matrix. The heatmap is the count
/// normalized by its maximum, smoothed with a unit-peak 3×3 Gaussian and
/// clipped to [0, 1].
inline RadarBev encode_radar_bev(const RadarPointCloud& points, const GridConfig& layout, std::size_t d,
                                 std::uint64_t embed_seed = kRadarEmbedSeed) {
  RadarBev out{FeatureGrid(layout, d, GridKind::rad_bev), {}, {}, {}};
  FeatureGrid& g = out.grid;
  const std::size_t cells = g.height * g.width;
  out.counts.assign(cells, 0);
  out.stats.assign(cells * kRadarCellFeatures, 0.0);
  for (const auto& p : points) {
    auto loc = locate_cell(g, p.position[0], p.position[1]);
    if (!loc) continue;
    const auto [r, c] = *loc;
    const std::size_t idx = r * g.width + c;
    const Vec3 center = g.cell_center(r, c);
    const double half = 0.5 * layout.voxel;
    double* s = &out.stats[idx * kRadarCellFeatures];
    s[0] += (p.position[0] - (center[0] - half)) / layout.voxel;
    s[1] += (p.position[1] - (center[1] - half)) / layout.voxel;
    s[2] += p.position[2];
    s[3] += p.velocity[0];
    s[4] += p.velocity[1];
    s[5] += p.rcs;
    ++out.counts[idx];
  }
  const Matrix embed = radar_embedding_matrix(d, embed_seed);
  int max_count = 0;
  for (std::size_t idx = 0; idx < cells; ++idx) {
    const int n = out.counts[idx];
    if (n == 0) continue;
    max_count = std::max(max_count, n);
    double* s = &out.stats[idx * kRadarCellFeatures];
    for (std::size_t k = 0; k < 6; ++k) s[k] /= n;
    s[6] = n;
    auto cell = g.cell(idx / g.width, idx % g.width);
    for (std::size_t o = 0; o < d; ++o) {
      cell[o] = dot(embed.row(o), std::span<const double>(s, kRadarCellFeatures));
    }
  }

  out.heatmap.assign(cells, 0.0);
  if (max_count > 0) {
    for (std::size_t r = 0; r < g.height; ++r) {
      for (std::size_t c = 0; c < g.width; ++c) {
        double acc = 0.0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(g.height) || cc >= static_cast<long>(g.width)) continue;
            const int n = out.counts[static_cast<std::size_t>(rr) * g.width + static_cast<std::size_t>(cc)];
            if (n == 0) continue;
            acc += std::exp(-0.5 * (dr * dr + dc * dc)) * n / static_cast<double>(max_count);
          }
        }
        out.heatmap[r * g.width + c] = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace hqf
