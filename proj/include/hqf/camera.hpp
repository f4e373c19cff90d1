// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "hqf/errors.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Pinhole camera. `rotation` maps world axes to camera axes (x right,
/// y down, z forward); `center` is the camera position in world meters.
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 center{0, 0, 0};
};

struct CameraRig {
  std::vector<Camera> cameras;
};

struct PixelProjection {
  double u;
  double v;
  double depth;
};

inline constexpr double kMinDepth = 0.1;

inline Vec3 world_to_camera(const Vec3& p, const Camera& cam) {
  const Vec3 rel{p[0] - cam.center[0], p[1] - cam.center[1], p[2] - cam.center[2]};
  Vec3 out{};
  for (int r = 0; r < 3; ++r) {
    out[r] = cam.rotation[r][0] * rel[0] + cam.rotation[r][1] * rel[1] + cam.rotation[r][2] * rel[2];
  }
  return out;
}

/// Projects without the image-bounds test; empty only for depth ≤ kMinDepth.
inline std::optional<PixelProjection> project_unbounded(const Vec3& p, const Camera& cam) {
  const Vec3 pc = world_to_camera(p, cam);
  if (pc[2] <= kMinDepth) return std::nullopt;
  return PixelProjection{cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy, pc[2]};
}

inline bool in_image(double u, double v, const Camera& cam) {
  return u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
}

/// Pinhole projection of a world point. Empty when the point is closer than
/// 0.1 m in depth or lands outside the image.
inline std::optional<PixelProjection> project_to_view(const Vec3& p, const Camera& cam) {
  auto proj = project_unbounded(p, cam);
  if (!proj || !in_image(proj->u, proj->v, cam)) return std::nullopt;
  return proj;
}

/// Inverse of project_to_view for a known depth.
inline Vec3 back_project(const Camera& cam, double u, double v, double depth) {
  const Vec3 pc{(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
  Vec3 out = cam.center;
  for (int c = 0; c < 3; ++c) {
    out[c] += cam.rotation[0][c] * pc[0] + cam.rotation[1][c] * pc[1] + cam.rotation[2][c] * pc[2];
  }
  return out;
}

struct RigConfig {
  int num_cameras = 6;
  int image_width = 704;
  int image_height = 256;
  double hfov_deg = 70.0;
  double mount_height = 1.5;
};

/// Cameras at the origin facing outward, evenly spaced in heading.
inline CameraRig make_surround_rig(const RigConfig& cfg) {
  if (cfg.num_cameras < 1) throw ConfigError("rig: need at least one camera");
  if (cfg.image_width < 1 || cfg.image_height < 1) throw ConfigError("rig: image size must be positive");
  if (!(cfg.hfov_deg > 0.0 && cfg.hfov_deg < 180.0)) throw ConfigError("rig: hfov must be in (0, 180)");
  CameraRig rig;
  const double f = 0.5 * cfg.image_width / std::tan(0.5 * cfg.hfov_deg * std::numbers::pi / 180.0);
  for (int k = 0; k < cfg.num_cameras; ++k) {
    const double heading = 2.0 * std::numbers::pi * k / cfg.num_cameras;
    const double s = std::sin(heading), c = std::cos(heading);
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * cfg.image_width;
    cam.cy = 0.5 * cfg.image_height;
    cam.width = cfg.image_width;
    cam.height = cfg.image_height;
    cam.rotation = Mat3{{{s, -c, 0.0}, {0.0, 0.0, -1.0}, {c, s, 0.0}}};
    cam.center = {0.0, 0.0, cfg.mount_height};
    rig.cameras.push_back(cam);
  }
  return rig;
}

}  // namespace hqf
