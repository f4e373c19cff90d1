// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hqf/errors.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

enum class GridKind { img_bev, rad_bev };

inline std::string_view to_string(GridKind k) {
  return k == GridKind::img_bev ? "img_bev" : "rad_bev";
}

inline GridKind grid_kind_from_string(std::string_view s) {
  if (s == "img_bev") return GridKind::img_bev;
  if (s == "rad_bev") return GridKind::rad_bev;
  throw FormatError("unknown grid kind '" + std::string(s) + "'");
}

/// Metric layout of a square-celled BEV grid.
struct GridConfig {
  double x_min = -51.2;
  double x_max = 51.2;
  double y_min = -51.2;
  double y_max = 51.2;
  double voxel = 0.8;

  static GridConfig symmetric(double extent, double voxel) {
    return {-extent, extent, -extent, extent, voxel};
  }

  std::size_t width() const { return cells_along(x_max - x_min, "x"); }
  std::size_t height() const { return cells_along(y_max - y_min, "y"); }

 private:
  std::size_t cells_along(double span, const char* axis) const {
    if (!(voxel > 0.0) || !(span > 0.0)) throw ConfigError("grid: voxel and extent must be positive");
    const double n = span / voxel;
    const double rounded = std::round(n);
    if (std::abs(n - rounded) > 1e-9 * std::max(1.0, n)) {
      throw ConfigError(std::string("grid: extent along ") + axis +
                        " is not an integer number of voxels");
    }
    return static_cast<std::size_t>(rounded);
  }
};

/// H×W×d BEV feature grid. Rows follow y, columns follow x; cell (r, c) is
/// centered at (x_min + (c + 0.5)·voxel, y_min + (r + 0.5)·voxel).
struct FeatureGrid {
  GridConfig layout;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  GridKind kind = GridKind::img_bev;
  std::vector<double> data;

  FeatureGrid() = default;
  FeatureGrid(const GridConfig& cfg, std::size_t d, GridKind k)
      : layout(cfg), height(cfg.height()), width(cfg.width()), dim(d), kind(k),
        data(height * width * d, 0.0) {}

  std::span<double> cell(std::size_t r, std::size_t c) {
    return {data.data() + (r * width + c) * dim, dim};
  }
  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return {data.data() + (r * width + c) * dim, dim};
  }

  Vec3 cell_center(std::size_t r, std::size_t c) const {
    return {layout.x_min + (static_cast<double>(c) + 0.5) * layout.voxel,
            layout.y_min + (static_cast<double>(r) + 0.5) * layout.voxel, 0.0};
  }

  bool contains(double x, double y) const {
    return x >= layout.x_min && x <= layout.x_max && y >= layout.y_min && y <= layout.y_max;
  }
};

/// One bilinear tap: cell index and interpolation weight.
struct BilinearTap {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// The four taps used to interpolate at fractional cell coordinates
/// (frac_row, frac_col), where integer coordinates are cell centers. The
/// coordinates are clamped to the center lattice, so points in the outer
/// half-cell replicate the border cells.
inline std::array<BilinearTap, 4> bilinear_taps(double frac_row, double frac_col,
                                                std::size_t height, std::size_t width) {
  const double fr = std::clamp(frac_row, 0.0, static_cast<double>(height - 1));
  const double fc = std::clamp(frac_col, 0.0, static_cast<double>(width - 1));
  auto r0 = static_cast<std::size_t>(std::floor(fr));
  auto c0 = static_cast<std::size_t>(std::floor(fc));
  const std::size_t r1 = std::min(r0 + 1, height - 1);
  const std::size_t c1 = std::min(c0 + 1, width - 1);
  const double tr = fr - static_cast<double>(r0);
  const double tc = fc - static_cast<double>(c0);
  return {{{r0, c0, (1 - tr) * (1 - tc)},
           {r0, c1, (1 - tr) * tc},
           {r1, c0, tr * (1 - tc)},
           {r1, c1, tr * tc}}};
}

/// Interpolates a dense H×W×d array at fractional cell coordinates.
inline Vector interpolate_cells(std::span<const double> data, std::size_t height,
                                std::size_t width, std::size_t dim, double frac_row,
                                double frac_col) {
  Vector out(dim, 0.0);
  for (const auto& tap : bilinear_taps(frac_row, frac_col, height, width)) {
    if (tap.weight == 0.0) continue;
    const double* cell = data.data() + (tap.row * width + tap.col) * dim;
    for (std::size_t k = 0; k < dim; ++k) out[k] += tap.weight * cell[k];
  }
  return out;
}

/// Bilinear feature lookup at metric BEV point (x, y). Points outside the
/// grid extent return the zero vector.
inline Vector bilinear_sample(const FeatureGrid& grid, double x, double y) {
  if (!grid.contains(x, y)) return Vector(grid.dim, 0.0);
  const double fc = (x - grid.layout.x_min) / grid.layout.voxel - 0.5;
  const double fr = (y - grid.layout.y_min) / grid.layout.voxel - 0.5;
  return interpolate_cells(grid.data, grid.height, grid.width, grid.dim, fr, fc);
}

}  // namespace hqf
