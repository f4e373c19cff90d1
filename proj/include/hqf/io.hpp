// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hqf/blob_io.hpp"
#include "hqf/camera.hpp"
#include "hqf/decoder.hpp"
#include "hqf/grid.hpp"
#include "hqf/qmix.hpp"
#include "hqf/qswap.hpp"
#include "hqf/queries.hpp"
#include "hqf/scene.hpp"

namespace hqf {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Scene

inline json to_json(const RigConfig& c) {
  return {{"num_cameras", c.num_cameras}, {"image_width", c.image_width}, {"image_height", c.image_height},
          {"hfov_deg", c.hfov_deg}, {"mount_height", c.mount_height}};
}

inline RigConfig rig_config_from_json(const json& j) {
  RigConfig c;
  c.num_cameras = j.at("num_cameras");
  c.image_width = j.at("image_width");
  c.image_height = j.at("image_height");
  c.hfov_deg = j.at("hfov_deg");
  c.mount_height = j.at("mount_height");
  return c;
}

inline json to_json(const Camera& c) {
  json rot = json::array();
  for (const auto& r : c.rotation) rot.push_back({r[0], r[1], r[2]});
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"rotation", rot}, {"center", c.center}};
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) c.rotation[r][k] = j.at("rotation").at(r).at(k);
  }
  c.center = j.at("center").get<Vec3>();
  return c;
}

inline json to_json(const SceneObject& o) {
  return {{"id", o.id}, {"center", o.center}, {"size", o.size}, {"yaw", o.yaw},
          {"velocity", o.velocity}, {"class_id", o.class_id}};
}

inline json to_json(const Scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) objects.push_back(to_json(o));
  json cams = json::array();
  for (const auto& c : s.rig.cameras) cams.push_back(to_json(c));
  return {{"schema", "hqf.scene"},
          {"version", 1},
          {"seed", s.seed},
          {"config",
           {{"extent", s.config.extent},
            {"num_objects", s.config.num_objects},
            {"num_classes", s.config.num_classes},
            {"feature_dim", s.config.feature_dim},
            {"min_separation", s.config.min_separation},
            {"rig", to_json(s.config.rig)}}},
          {"objects", objects},
          {"signatures", s.signatures},
          {"rig", {{"cameras", cams}}}};
}

inline Scene scene_from_json(const json& j) {
  try {
    if (j.at("schema") != "hqf.scene") throw FormatError("scene: wrong schema");
    Scene s;
    s.seed = j.at("seed");
    const auto& c = j.at("config");
    s.config.extent = c.at("extent");
    s.config.num_objects = c.at("num_objects");
    s.config.num_classes = c.at("num_classes");
    s.config.feature_dim = c.at("feature_dim");
    s.config.min_separation = c.at("min_separation");
    s.config.rig = rig_config_from_json(c.at("rig"));
    for (const auto& o : j.at("objects")) {
      SceneObject obj;
      obj.id = o.at("id");
      obj.center = o.at("center").get<Vec3>();
      obj.size = o.at("size").get<Vec3>();
      obj.yaw = o.at("yaw");
      obj.velocity = o.at("velocity").get<std::array<double, 2>>();
      obj.class_id = o.at("class_id");
      if (!(obj.size[0] > 0 && obj.size[1] > 0 && obj.size[2] > 0)) throw FormatError("scene: object sizes must be positive");
      s.objects.push_back(obj);
    }
    s.signatures = j.at("signatures").get<std::vector<Vector>>();
    for (const auto& cam : j.at("rig").at("cameras")) s.rig.cameras.push_back(camera_from_json(cam));
    if (s.signatures.size() != s.objects.size()) throw FormatError("scene: one signature per object required");
    for (const auto& sig : s.signatures) {
      if (sig.size() != s.config.feature_dim) throw FormatError("scene: signature width mismatch");
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Feature grid dump

inline json grid_header(const FeatureGrid& g) {
  return {{"schema", "hqf.grid"},
          {"kind", to_string(g.kind)},
          {"shape", {g.height, g.width, g.dim}},
          {"extent", {g.layout.x_min, g.layout.x_max, g.layout.y_min, g.layout.y_max}},
          {"voxel", g.layout.voxel},
          {"dtype", "float32"},
          {"byte_order", "little"}};
}

inline void dump_grid(const FeatureGrid& g, const std::string& path) {
  std::vector<float> values(g.data.begin(), g.data.end());
  write_container(path, grid_header(g), values);
}

inline FeatureGrid load_grid(const std::string& path) {
  const FloatContainer c = read_container(path);
  try {
    const auto& h = c.header;
    const auto& e = h.at("extent");
    GridConfig layout{e.at(0), e.at(1), e.at(2), e.at(3), h.at("voxel")};
    FeatureGrid g(layout, h.at("shape").at(2), grid_kind_from_string(h.at("kind").get<std::string>()));
    if (g.height != h.at("shape").at(0) || g.width != h.at("shape").at(1)) throw FormatError("grid: shape/extent mismatch");
    if (c.values.size() != g.data.size()) throw FormatError("grid: blob length mismatch");
    std::copy(c.values.begin(), c.values.end(), g.data.begin());
    return g;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("grid: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Diagnostics

inline json to_json(const QuerySet& q) {
  json types = json::array();
  for (auto t : q.types) types.push_back(to_string(t));
  return {{"positions", q.positions}, {"types", types}, {"scores", q.init_scores}};
}

inline json type_matrix_json(const TypeMatrix& m) {
  json out = json::array();
  for (const auto& row : m) out.push_back(row);
  return out;
}

inline json to_json(const TypeAttentionStats& s) {
  return {{"mass", type_matrix_json(s.mass)}, {"mean_per_key", type_matrix_json(s.mean_per_key)}};
}

inline TypeAttentionStats stats_from_json(const json& j) {
  TypeAttentionStats s;
  for (std::size_t a = 0; a < kNumQueryTypes; ++a) {
    for (std::size_t b = 0; b < kNumQueryTypes; ++b) {
      s.mass[a][b] = j.at("mass").at(a).at(b);
      s.mean_per_key[a][b] = j.at("mean_per_key").at(a).at(b);
    }
  }
  return s;
}

inline json to_json(const CrossTypeLink& l) {
  return {{"source", l.source}, {"target", l.target}, {"weight", l.weight}, {"source_type", to_string(l.source_type)},
          {"target_type", to_string(l.target_type)}, {"source_confidence", l.source_confidence}};
}

/// Per-point dump of one layer's BEV sample sets.
inline json sample_sets_json(const std::vector<std::array<SampleSet, 2>>& sets, std::span<const Vec3> positions) {
  json out = json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (const auto& set : sets[i]) {
      for (std::size_t k = 0; k < set.points.size(); ++k) {
        const auto& p = set.points[k];
        out.push_back({{"owner", p.owner},
                       {"grid", to_string(p.grid)},
                       {"origin", to_string(p.origin)},
                       {"source", p.source},
                       {"position", {positions[i][0] + p.offset[0], positions[i][1] + p.offset[1]}},
                       {"score", p.score},
                       {"weight", k < set.weights.size() ? set.weights[k] : 0.0}});
      }
    }
  }
  return out;
}

}  // namespace hqf
