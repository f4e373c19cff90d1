// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqf/decoder.hpp"
#include "hqf/errors.hpp"
#include "hqf/io.hpp"
#include "hqf/metrics.hpp"
#include "hqf/qmix.hpp"
#include "hqf/queries.hpp"
#include "hqf/scene.hpp"
#include "hqf/weights_io.hpp"

namespace hqf {

inline constexpr int kReportVersion = 1;
inline constexpr const char* kUntrainedNote =
    "decoder weights are random and untrained; detection metrics exercise the pipeline and are not trained accuracy";

// ---------------------------------------------------------------------------
// Configuration

/// Every recognized key with its default. Anything not listed is rejected.
inline json default_run_config() {
  return json::parse(R"({
    "scene": {
      "seed": 7, "path": "", "extent": 51.2, "voxel": 0.8, "num_objects": 20, "num_classes": 10,
      "min_separation": 2.0,
      "cameras": {"count": 6, "image_width": 704, "image_height": 256, "hfov_deg": 70.0, "mount_height": 1.5},
      "pv": {"downsample": 16, "noise": 0.1},
      "image_bev": {"noise": 0.1, "miss_rate": 0.2},
      "radar": {"points_per_object": 8, "pos_noise": 0.2, "vel_noise": 0.1, "clutter_count": 30}
    },
    "queries": {
      "seed": 11, "num_world": 450, "num_image": 225, "num_radar": 225, "rings": 15, "ring_max_radius": null,
      "proposals_per_view": 50, "center_noise_px": 4.0, "depth_noise": 1.0, "score_jitter": 0.02
    },
    "decoder": {
      "layers": 6, "dim": 256, "heads": 8, "k_pv": 4, "enable_qmix": true, "enable_qswap": true,
      "qmix_placement": "post_agg",
      "qswap": {"alpha": 1.5, "lambda": 1.0, "num_neighbors": 4, "k_base": 20, "k_per": 2, "k_extra": 4,
                "mode": "append", "affinity_floor": 1e-8, "fixed_radius": null}
    },
    "weights": {"seed": 1, "path": ""},
    "emit": {"attn_stats": true, "links": true, "link_conf_threshold": 0.1, "link_k": 2,
             "query_snapshots": false, "sample_dump": "", "grid_dump_prefix": "", "timing": false},
    "output": {"report": ""}
  })");
}

namespace detail {

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline bool nullable(const std::string& path) {
  return path == "queries.ring_max_radius" || path == "decoder.qswap.fixed_radius";
}

inline bool accepts(const json& current, const json& value, const std::string& path) {
  if (nullable(path)) return value.is_null() || value.is_number();
  if (current.is_boolean()) return value.is_boolean();
  if (current.is_number_integer()) return value.is_number_integer();
  if (current.is_number()) return value.is_number();
  if (current.is_string()) return value.is_string();
  return false;
}

}  // namespace detail

/// Overlays `patch` onto `base`, refusing keys that `base` does not have and
/// values whose JSON kind differs from the default's.
inline void merge_config(json& base, const json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = detail::join_path(prefix, it.key());
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_config(slot, it.value(), path);
    } else if (detail::accepts(slot, it.value(), path)) {
      slot = it.value();
    } else {
      throw ConfigError("config: key '" + path + "' has the wrong type");
    }
  }
}

/// Turns "a.b.c=value" into a patch. The value is parsed as JSON when it
/// can be, otherwise it is taken as a string.
inline json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(start, end - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

/// Named config patches for the ablation configurations.
inline const std::map<std::string, json>& presets() {
  static const std::map<std::string, json> table = [] {
    std::map<std::string, json> t;
    t["paper-default"] = json::object();
    t["qinit"] = {{"decoder", {{"enable_qmix", false}, {"enable_qswap", false}}}};
    t["qmix"] = {{"decoder", {{"enable_qmix", true}, {"enable_qswap", false}}}};
    t["qmix-qswap"] = {{"decoder", {{"enable_qmix", true}, {"enable_qswap", true}}}};
    t["qswap-replace"] = {{"decoder", {{"qswap", {{"mode", "replace"}}}}}};
    t["pre-cross"] = {{"decoder", {{"enable_qswap", false}, {"qmix_placement", "pre_agg"}}}};
    t["post-self"] = {{"decoder", {{"enable_qswap", false}, {"qmix_placement", "post_self"}}}};
    t["post-self-cross"] = {{"decoder", {{"enable_qswap", false}, {"qmix_placement", "post_self_cross"}}}};
    t["k24"] = {{"decoder", {{"enable_qswap", false}, {"qswap", {{"k_base", 24}}}}}};
    t["fixed-radius-5m"] = {{"decoder", {{"qswap", {{"fixed_radius", 5.0}}}}}};
    t["desk-small"] = json::parse(R"({
      "scene": {"extent": 25.6, "num_objects": 8},
      "queries": {"num_world": 40, "num_image": 20, "num_radar": 20, "rings": 4, "proposals_per_view": 10},
      "decoder": {"layers": 2, "dim": 48, "heads": 4}
    })");
    return t;
  }();
  return table;
}

struct EmitConfig {
  bool attn_stats = true;
  bool links = true;
  double link_conf_threshold = 0.1;
  std::size_t link_k = 2;
  bool query_snapshots = false;
  std::string sample_dump;
  std::string grid_dump_prefix;
  bool timing = false;
};

struct RunConfig {
  json raw;  ///< Fully merged config, echoed in reports.
  std::uint64_t scene_seed = 7;
  std::string scene_path;
  SceneConfig scene;
  double voxel = 0.8;
  PvConfig pv;
  ImageBevConfig image_bev;
  RadarConfig radar;
  std::uint64_t query_seed = 11;
  int num_world = 450, num_image = 225, num_radar = 225;
  RingConfig rings;
  ProposalConfig proposals;
  DecoderConfig decoder;
  std::uint64_t weights_seed = 1;
  std::string weights_path;
  EmitConfig emit;
  std::string report_path;
};

inline RunConfig run_config_from_json(const json& merged) {
  RunConfig c;
  c.raw = merged;
  try {
    const json& s = merged.at("scene");
    c.scene_seed = s.at("seed");
    c.scene_path = s.at("path");
    c.scene.extent = s.at("extent");
    c.voxel = s.at("voxel");
    c.scene.num_objects = s.at("num_objects");
    c.scene.num_classes = s.at("num_classes");
    c.scene.min_separation = s.at("min_separation");
    const json& cam = s.at("cameras");
    c.scene.rig.num_cameras = cam.at("count");
    c.scene.rig.image_width = cam.at("image_width");
    c.scene.rig.image_height = cam.at("image_height");
    c.scene.rig.hfov_deg = cam.at("hfov_deg");
    c.scene.rig.mount_height = cam.at("mount_height");
    c.pv.downsample = s.at("pv").at("downsample");
    c.pv.noise = s.at("pv").at("noise");
    c.image_bev.noise = s.at("image_bev").at("noise");
    c.image_bev.miss_rate = s.at("image_bev").at("miss_rate");
    const json& r = s.at("radar");
    c.radar.points_per_object = r.at("points_per_object");
    c.radar.pos_noise = r.at("pos_noise");
    c.radar.vel_noise = r.at("vel_noise");
    c.radar.clutter_count = r.at("clutter_count");

    const json& q = merged.at("queries");
    c.query_seed = q.at("seed");
    c.num_world = q.at("num_world");
    c.num_image = q.at("num_image");
    c.num_radar = q.at("num_radar");
    c.rings.rings = q.at("rings");
    c.rings.max_radius = q.at("ring_max_radius").is_null() ? c.scene.extent : q.at("ring_max_radius").get<double>();
    c.proposals.per_view = q.at("proposals_per_view");
    c.proposals.center_noise_px = q.at("center_noise_px");
    c.proposals.depth_noise = q.at("depth_noise");
    c.proposals.score_jitter = q.at("score_jitter");

    const json& d = merged.at("decoder");
    c.decoder.layers = d.at("layers");
    c.decoder.dim = d.at("dim");
    c.decoder.heads = d.at("heads");
    c.decoder.num_classes = static_cast<std::size_t>(c.scene.num_classes);
    c.decoder.k_pv = d.at("k_pv");
    c.decoder.enable_qmix = d.at("enable_qmix");
    c.decoder.enable_qswap = d.at("enable_qswap");
    c.decoder.placement = qmix_placement_from_string(d.at("qmix_placement").get<std::string>());
    c.decoder.extent = c.scene.extent;
    const json& qs = d.at("qswap");
    c.decoder.qswap.alpha = qs.at("alpha");
    c.decoder.qswap.lambda = qs.at("lambda");
    c.decoder.qswap.num_neighbors = qs.at("num_neighbors");
    c.decoder.qswap.k_base = qs.at("k_base");
    c.decoder.qswap.k_per = qs.at("k_per");
    c.decoder.qswap.k_extra = qs.at("k_extra");
    c.decoder.qswap.mode = qswap_mode_from_string(qs.at("mode").get<std::string>());
    c.decoder.qswap.affinity_floor = qs.at("affinity_floor");
    if (!qs.at("fixed_radius").is_null()) c.decoder.qswap.fixed_radius = qs.at("fixed_radius").get<double>();
    c.scene.feature_dim = c.decoder.dim;

    c.weights_seed = merged.at("weights").at("seed");
    c.weights_path = merged.at("weights").at("path");

    const json& e = merged.at("emit");
    c.emit.attn_stats = e.at("attn_stats");
    c.emit.links = e.at("links");
    c.emit.link_conf_threshold = e.at("link_conf_threshold");
    c.emit.link_k = e.at("link_k");
    c.emit.query_snapshots = e.at("query_snapshots");
    c.emit.sample_dump = e.at("sample_dump");
    c.emit.grid_dump_prefix = e.at("grid_dump_prefix");
    c.emit.timing = e.at("timing");
    c.report_path = merged.at("output").at("report");
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  if (c.num_world < 1 || c.num_image < 0 || c.num_radar < 0) throw ConfigError("config: query counts out of range");
  if (c.scene.num_classes < 1) throw ConfigError("config: scene.num_classes must be >= 1");
  if (!(c.voxel > 0.0) || !(c.scene.extent > 0.0)) throw ConfigError("config: extent and voxel must be positive");
  const GridConfig layout = GridConfig::symmetric(c.scene.extent, c.voxel);
  (void)layout.width();  // throws when the extent is not a whole number of voxels
  c.decoder.validate();
  return c;
}

/// Defaults, then a preset, then a config file patch, then --set overrides.
inline RunConfig resolve_run_config(const std::string& preset, const std::optional<json>& file_patch,
                                    const std::vector<std::string>& overrides) {
  json merged = default_run_config();
  if (!preset.empty()) {
    auto it = presets().find(preset);
    if (it == presets().end()) throw ConfigError("unknown preset '" + preset + "'");
    merge_config(merged, it->second);
  }
  if (file_patch) merge_config(merged, *file_patch);
  for (const auto& o : overrides) merge_config(merged, parse_override(o));
  return run_config_from_json(merged);
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw FormatError("'" + path + "' is not valid JSON");
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PreparedInputs {
  Scene scene;
  RadarPointCloud radar;
  std::vector<int> image_bev_omitted;
  SceneFeatures features;
  QuerySet queries;
  std::size_t image_padded = 0;
};

inline Scene scene_for(const RunConfig& c) {
  if (c.scene_path.empty()) return generate_scene(c.scene_seed, c.scene);
  Scene s = scene_from_json(read_json_file(c.scene_path));
  if (s.config.feature_dim != c.decoder.dim) throw ConfigError("scene file feature_dim differs from decoder.dim");
  if (s.config.extent != c.scene.extent) throw ConfigError("scene file extent differs from scene.extent");
  if (s.config.num_classes != c.scene.num_classes) throw ConfigError("scene file num_classes differs from config");
  return s;
}

/// Scene, rendered feature maps and the concatenated (img, rad, world) query set.
inline PreparedInputs prepare_inputs(const RunConfig& c) {
  PreparedInputs in;
  in.scene = scene_for(c);
  const GridConfig layout = GridConfig::symmetric(c.scene.extent, c.voxel);
  in.radar = simulate_radar_points(in.scene, in.scene.seed, c.radar);
  in.image_bev_omitted = image_bev_omitted(in.scene, c.image_bev.miss_rate);
  auto pv = render_pv_features(in.scene, c.pv);
  RadarBev rb = encode_radar_bev(in.radar, layout, c.decoder.dim);
  FeatureGrid img = render_image_bev(in.scene, layout, c.image_bev);

  const auto proposals = generate_2d_proposals(in.scene, pv, c.proposals, c.query_seed);
  ImageQueryInit iq = init_image_queries(proposals, in.scene.rig, c.num_image, c.decoder.dim, c.scene.extent);
  QuerySet rq = init_radar_queries(rb.heatmap, rb.grid, c.num_radar);
  QuerySet wq = init_world_queries(c.num_world, c.scene.extent, c.rings, c.decoder.dim, c.query_seed);
  in.queries = concat_query_sets(iq.queries, rq, wq);
  in.image_padded = iq.padded;
  in.features = SceneFeatures{std::move(img), std::move(rb.grid), std::move(pv), in.scene.rig};
  return in;
}

inline DecoderWeights weights_for(const RunConfig& c) {
  return c.weights_path.empty() ? init_weights(c.weights_seed, c.decoder) : load_weights(c.weights_path, c.decoder);
}

inline std::vector<Detection> ground_truth(const Scene& s) {
  std::vector<Detection> out;
  for (const auto& o : s.objects) {
    out.push_back({{o.center[0], o.center[1]}, {o.size[0], o.size[1], o.size[2]}, o.yaw, o.class_id, 1.0});
  }
  return out;
}

/// One detection per query: arg-max class and its score.
inline std::vector<Detection> layer_detections(const LayerOutput& lo) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < lo.boxes.size(); ++i) {
    auto scores = lo.class_scores.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
      if (scores[k] > scores[best]) best = k;
    }
    const Box3D& b = lo.boxes[i];
    out.push_back({{b.center[0], b.center[1]}, {b.size[0], b.size[1], b.size[2]}, b.yaw, static_cast<int>(best),
                   scores.empty() ? 0.0 : scores[best]});
  }
  return out;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json detection_metrics_json(const LayerOutput& lo, const Scene& scene) {
  const auto preds = layer_detections(lo);
  const auto gts = ground_truth(scene);
  const ApReport ap = average_precision(preds, gts);
  const MatchResult m2 = match_detections(preds, gts, 2.0);
  const auto err = translation_orientation_errors(m2.matches, preds, gts);
  json by_thr = json::object();
  for (std::size_t t = 0; t < ap.thresholds.size(); ++t) {
    double sum = 0.0;
    for (const auto& [cls, aps] : ap.per_class) sum += aps[t];
    std::ostringstream key;
    key << ap.thresholds[t];
    by_thr[key.str()] = ap.per_class.empty() ? 0.0 : sum / static_cast<double>(ap.per_class.size());
  }
  return {{"mAP_center", ap.mean},
          {"ap_by_threshold", by_thr},
          {"ATE", number_or_null(err.ate)},
          {"AOE", number_or_null(err.aoe)},
          {"matched_2m", m2.matches.size()}};
}

struct SizeSummary {
  double mean = 0.0;
  std::size_t min = 0, max = 0;
};

template <class F>
SizeSummary summarize_sizes(const LayerOutput& lo, F&& count) {
  SizeSummary s;
  if (lo.sample_sets.empty()) return s;
  s.min = static_cast<std::size_t>(-1);
  double total = 0.0;
  for (const auto& sets : lo.sample_sets) {
    const std::size_t n = count(sets);
    total += static_cast<double>(n);
    s.min = std::min(s.min, n);
    s.max = std::max(s.max, n);
  }
  s.mean = total / static_cast<double>(lo.sample_sets.size());
  return s;
}

inline json to_json(const SizeSummary& s) { return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}}; }

inline json sample_set_summary(const LayerOutput& lo) {
  auto shared = [](const std::array<SampleSet, 2>& sets) {
    std::size_t n = 0;
    for (const auto& set : sets) {
      for (const auto& p : set.points) n += p.origin == SampleOrigin::shared;
    }
    return n;
  };
  double pv = 0.0;
  for (auto n : lo.pv_tokens) pv += static_cast<double>(n);
  return {{"img_bev", to_json(summarize_sizes(lo, [](const auto& s) { return s[0].points.size(); }))},
          {"rad_bev", to_json(summarize_sizes(lo, [](const auto& s) { return s[1].points.size(); }))},
          {"shared", to_json(summarize_sizes(lo, shared))},
          {"pv_tokens_mean", lo.pv_tokens.empty() ? 0.0 : pv / static_cast<double>(lo.pv_tokens.size())}};
}

/// Links are read from the cross-type attention when the layer has one and
/// from the shared self-attention otherwise.
inline std::pair<std::string, std::vector<CrossTypeLink>> layer_links(const LayerOutput& lo,
                                                                      std::span<const QueryType> types,
                                                                      const EmitConfig& e) {
  const Matrix& attn = lo.qmix_attn ? *lo.qmix_attn : lo.self_attn;
  return {lo.qmix_attn ? "qmix" : "self",
          extract_top_links(attn, types, lo.confidences(), e.link_conf_threshold, e.link_k)};
}

struct StageTimes {
  double prepare_ms = 0.0, weights_ms = 0.0, decode_ms = 0.0, metrics_ms = 0.0;
};

inline json build_report(const RunConfig& c, const PreparedInputs& in, const std::vector<LayerOutput>& layers,
                         const StageTimes* times) {
  const auto counts = type_counts(in.queries.types);
  json report = {{"schema", "hqf.report"},
                 {"version", kReportVersion},
                 {"note", kUntrainedNote},
                 {"config", c.raw},
                 {"weights",
                  {{"source", c.weights_path.empty() ? "init" : "file"},
                   {"config_hash", config_hash(c.decoder)}}},
                 {"scene",
                  {{"seed", in.scene.seed},
                   {"objects", in.scene.objects.size()},
                   {"radar_points", in.radar.size()},
                   {"image_bev_omitted", in.image_bev_omitted}}},
                 {"queries",
                  {{"total", in.queries.size()},
                   {"img", counts[0]},
                   {"rad", counts[1]},
                   {"w", counts[2]},
                   {"image_padded", in.image_padded}}}};
  if (c.emit.query_snapshots) report["queries"]["initial"] = to_json(in.queries);

  std::vector<TypeAttentionStats> self_all, qmix_all;
  json jl = json::array();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerOutput& lo = layers[l];
    json entry = {{"layer", l},
                  {"metrics", detection_metrics_json(lo, in.scene)},
                  {"sample_sets", sample_set_summary(lo)}};
    if (c.emit.attn_stats) {
      const auto self = attention_type_stats(lo.self_attn, in.queries.types);
      self_all.push_back(self);
      entry["attn_stats"]["self"] = to_json(self);
      if (lo.qmix_attn) {
        const auto q = attention_type_stats(*lo.qmix_attn, in.queries.types);
        qmix_all.push_back(q);
        entry["attn_stats"]["qmix"] = to_json(q);
      }
      if (lo.post_self_attn) entry["attn_stats"]["post_self"] = to_json(attention_type_stats(*lo.post_self_attn, in.queries.types));
    }
    if (c.emit.links) {
      auto [source, links] = layer_links(lo, in.queries.types, c.emit);
      json arr = json::array();
      for (const auto& link : links) arr.push_back(to_json(link));
      entry["links"] = {{"attention", source}, {"items", arr}};
    }
    if (c.emit.query_snapshots) {
      json types = json::array();
      for (auto t : in.queries.types) types.push_back(to_string(t));
      entry["queries"] = {{"positions", lo.positions}, {"types", types}, {"confidences", lo.confidences()}};
    }
    jl.push_back(std::move(entry));
  }
  report["layers"] = std::move(jl);
  if (c.emit.attn_stats) {
    report["attn_stats_mean"]["self"] = to_json(mean_stats(self_all));
    if (!qmix_all.empty()) report["attn_stats_mean"]["qmix"] = to_json(mean_stats(qmix_all));
  }
  if (times) {
    report["timing_ms"] = {{"prepare", times->prepare_ms},
                           {"weights", times->weights_ms},
                           {"decode", times->decode_ms},
                           {"metrics", times->metrics_ms}};
  }
  return report;
}

struct RunResult {
  PreparedInputs inputs;
  std::vector<LayerOutput> layers;
  json report;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw FormatError("write to '" + path + "' failed");
}

/// The full run: inputs, weights, decode, report, plus optional dumps.
inline RunResult run_experiment(const RunConfig& c) {
  using clock = std::chrono::steady_clock;
  StageTimes times;
  RunResult r;
  auto t0 = clock::now();
  r.inputs = prepare_inputs(c);
  times.prepare_ms = elapsed_ms(t0);
  t0 = clock::now();
  const DecoderWeights w = weights_for(c);
  times.weights_ms = elapsed_ms(t0);
  t0 = clock::now();
  r.layers = decode(r.inputs.features, r.inputs.queries, w, c.decoder);
  times.decode_ms = elapsed_ms(t0);
  t0 = clock::now();
  r.report = build_report(c, r.inputs, r.layers, nullptr);
  times.metrics_ms = elapsed_ms(t0);
  if (c.emit.timing) r.report["timing_ms"] = build_report(c, r.inputs, {}, &times).at("timing_ms");

  if (!c.emit.sample_dump.empty()) {
    json dump = {{"schema", "hqf.samples"}, {"version", 1}, {"layers", json::array()}};
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
      dump["layers"].push_back(
          {{"layer", l}, {"points", sample_sets_json(r.layers[l].sample_sets, r.layers[l].sampling_positions)}});
    }
    write_text(c.emit.sample_dump, dump.dump());
  }
  if (!c.emit.grid_dump_prefix.empty()) {
    dump_grid(r.inputs.features.img_bev, c.emit.grid_dump_prefix + ".img_bev.bin");
    dump_grid(r.inputs.features.rad_bev, c.emit.grid_dump_prefix + ".rad_bev.bin");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Report post-processing

inline void check_report(const json& report) {
  if (!report.is_object() || report.value("schema", "") != "hqf.report") throw FormatError("not an hqf report");
  if (report.value("version", 0) != kReportVersion) throw FormatError("unsupported report version");
}

/// Long-format CSV of the 3×3 type statistics: one row per layer, attention
/// kind, metric and source type; columns are key types.
inline std::string attention_csv(const json& report) {
  check_report(report);
  std::ostringstream out;
  out.precision(17);
  out << "layer,attention,metric,source_type,img,rad,w\n";
  auto emit = [&](const std::string& layer, const std::string& kind, const json& stats) {
    for (const char* metric : {"mass", "mean_per_key"}) {
      for (std::size_t a = 0; a < kNumQueryTypes; ++a) {
        out << layer << ',' << kind << ',' << metric << ',' << to_string(kQueryTypes[a]);
        for (std::size_t b = 0; b < kNumQueryTypes; ++b) out << ',' << stats.at(metric).at(a).at(b).get<double>();
        out << '\n';
      }
    }
  };
  for (const auto& layer : report.at("layers")) {
    if (!layer.contains("attn_stats")) throw FormatError("report has no attention statistics (emit.attn_stats off)");
    for (const auto& [kind, stats] : layer.at("attn_stats").items()) {
      emit(std::to_string(layer.at("layer").get<std::size_t>()), kind, stats);
    }
  }
  if (report.contains("attn_stats_mean")) {
    for (const auto& [kind, stats] : report.at("attn_stats_mean").items()) emit("mean", kind, stats);
  }
  return out.str();
}

/// Link records per layer, optionally restricted to one layer.
inline json links_json(const json& report, std::optional<std::size_t> only_layer = std::nullopt) {
  check_report(report);
  json out = {{"schema", "hqf.links"}, {"version", 1}, {"layers", json::array()}};
  for (const auto& layer : report.at("layers")) {
    if (!layer.contains("links")) throw FormatError("report has no links (emit.links off)");
    const std::size_t idx = layer.at("layer");
    if (only_layer && *only_layer != idx) continue;
    out["layers"].push_back({{"layer", idx},
                             {"attention", layer.at("links").at("attention")},
                             {"links", layer.at("links").at("items")}});
  }
  if (only_layer && out["layers"].empty()) throw ConfigError("report has no layer " + std::to_string(*only_layer));
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string table;
  std::string name;
  bool qmix = true;
  bool qswap = false;
  QmixPlacement placement = QmixPlacement::post_agg;
};

inline std::vector<AblationVariant> ablation_variants() {
  return {{"ladder", "QInit", false, false, QmixPlacement::post_agg},
          {"ladder", "+QMix", true, false, QmixPlacement::post_agg},
          {"ladder", "+QMix+QSwap", true, true, QmixPlacement::post_agg},
          {"placement", "pre_agg", true, false, QmixPlacement::pre_agg},
          {"placement", "post_self", true, false, QmixPlacement::post_self},
          {"placement", "post_self_cross", true, false, QmixPlacement::post_self_cross},
          {"placement", "post_agg", true, false, QmixPlacement::post_agg}};
}

struct AblationRow {
  AblationVariant variant;
  double map_center = 0.0;
  double ate = 0.0, aoe = 0.0;
  double img_set_mean = 0.0, rad_set_mean = 0.0, shared_mean = 0.0;
  double seconds = 0.0;
};

/// Runs every variant on one prepared scene and one weight set. Variants
/// with identical decoder settings are decoded once and share their row.
inline std::vector<AblationRow> run_ablation(const RunConfig& base) {
  const PreparedInputs in = prepare_inputs(base);
  const DecoderWeights w = weights_for(base);
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants()) {
    auto same = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) {
      return r.variant.qmix == v.qmix && r.variant.qswap == v.qswap &&
             (!v.qmix || r.variant.placement == v.placement);
    });
    if (same != rows.end()) {
      AblationRow copy = *same;
      copy.variant = v;
      rows.push_back(copy);
      continue;
    }
    DecoderConfig cfg = base.decoder;
    cfg.enable_qmix = v.qmix;
    cfg.enable_qswap = v.qswap;
    cfg.placement = v.placement;
    const auto t0 = std::chrono::steady_clock::now();
    const auto layers = decode(in.features, in.queries, w, cfg);
    AblationRow row;
    row.variant = v;
    row.seconds = elapsed_ms(t0) / 1000.0;
    const LayerOutput& last = layers.back();
    const json m = detection_metrics_json(last, in.scene);
    row.map_center = m.at("mAP_center");
    row.ate = m.at("ATE").is_null() ? std::nan("") : m.at("ATE").get<double>();
    row.aoe = m.at("AOE").is_null() ? std::nan("") : m.at("AOE").get<double>();
    const json sizes = sample_set_summary(last);
    row.img_set_mean = sizes.at("img_bev").at("mean");
    row.rad_set_mean = sizes.at("rad_bev").at("mean");
    row.shared_mean = sizes.at("shared").at("mean");
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const RunConfig& base, bool with_timing) {
  std::ostringstream out;
  out.precision(10);
  out << "# " << kUntrainedNote << "\n";
  out << "# queries=" << base.num_image + base.num_radar + base.num_world << " layers=" << base.decoder.layers
      << " grid=" << GridConfig::symmetric(base.scene.extent, base.voxel).width() << "x"
      << GridConfig::symmetric(base.scene.extent, base.voxel).height() << " dim=" << base.decoder.dim << "\n";
  out << "table,variant,qmix,qswap,placement,mAP_center,ATE,AOE,img_set_mean,rad_set_mean,shared_mean";
  if (with_timing) out << ",seconds";
  out << '\n';
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(10);
    if (std::isfinite(v)) s << v;
    return s.str();
  };
  for (const auto& r : rows) {
    out << r.variant.table << ',' << r.variant.name << ',' << (r.variant.qmix ? 1 : 0) << ','
        << (r.variant.qswap ? 1 : 0) << ',' << (r.variant.qmix ? std::string(to_string(r.variant.placement)) : "none")
        << ',' << num(r.map_center) << ',' << num(r.ate) << ',' << num(r.aoe) << ',' << num(r.img_set_mean) << ','
        << num(r.rad_set_mean) << ',' << num(r.shared_mean);
    if (with_timing) out << ',' << num(r.seconds);
    out << '\n';
  }
  return out.str();
}

}  // namespace hqf
