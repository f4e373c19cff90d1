// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hqf/camera.hpp"
#include "hqf/errors.hpp"
#include "hqf/grid.hpp"
#include "hqf/numkernel.hpp"
#include "hqf/qmix.hpp"
#include "hqf/qswap.hpp"
#include "hqf/queries.hpp"
#include "hqf/scene.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

/// Where the cross-type attention sits inside a decoder layer.
enum class QmixPlacement { post_agg, pre_agg, post_self, post_self_cross };

inline std::string_view to_string(QmixPlacement p) {
  switch (p) {
    case QmixPlacement::post_agg: return "post_agg";
    case QmixPlacement::pre_agg: return "pre_agg";
    case QmixPlacement::post_self: return "post_self";
    case QmixPlacement::post_self_cross: return "post_self_cross";
  }
  return "?";
}

inline QmixPlacement qmix_placement_from_string(std::string_view s) {
  if (s == "post_agg") return QmixPlacement::post_agg;
  if (s == "pre_agg") return QmixPlacement::pre_agg;
  if (s == "post_self") return QmixPlacement::post_self;
  if (s == "post_self_cross") return QmixPlacement::post_self_cross;
  throw ConfigError("unknown qmix placement '" + std::string(s) + "'");
}

inline constexpr std::size_t kBoxOutputs = 10;  // dx dy dz log_w log_l log_h sin cos vx vy

struct DecoderConfig {
  std::size_t layers = 6;
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t num_classes = 10;
  std::size_t k_pv = 4;
  QSwapConfig qswap;  ///< qswap.k_base is the BEV base point count.
  bool enable_qmix = true;
  bool enable_qswap = true;
  QmixPlacement placement = QmixPlacement::post_agg;
  double extent = 51.2;  ///< Box centers are clipped to [−extent, extent]².
  double z_min = -5.0;
  double z_max = 5.0;

  void validate() const {
    if (layers < 1) throw ConfigError("decoder: layers must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0) {
      throw ConfigError("decoder: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (num_classes < 1) throw ConfigError("decoder: num_classes must be >= 1");
    if (!(extent > 0.0) || !(z_min < z_max)) throw ConfigError("decoder: invalid position clip");
    qswap.validate();
  }
};

struct AdapterWeights {
  Matrix w_in, b_in, w_out, b_out;
};

struct AggregationWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
};

struct HeadWeights {
  Matrix w_cls, b_cls, w_box, b_box;
};

/// The single weight set shared by every decoder layer.
struct DecoderWeights {
  std::array<AdapterWeights, kNumQueryTypes> adapters;
  Matrix type_embedding;  ///< 3×d, rows in QueryType order.
  MhaWeights self_attn;
  Matrix self_norm_gamma, self_norm_beta;
  SamplingHead bev_img, bev_rad, pv;
  AggregationWeights agg;
  MhaWeights qmix;
  MhaWeights post_self;
  FfnWeights ffn;
  HeadWeights head;

  /// Zero tensors of the right shapes (norm gains 1, sampling ranges 4 m / 8 px).
  static DecoderWeights zeros(const DecoderConfig& cfg) {
    const std::size_t d = cfg.dim;
    DecoderWeights w;
    for (auto& a : w.adapters) a = {Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d)};
    w.type_embedding = Matrix(kNumQueryTypes, d);
    w.self_attn = MhaWeights::zeros(d);
    w.self_norm_gamma = Matrix(1, d, 1.0);
    w.self_norm_beta = Matrix(1, d);
    w.bev_img = SamplingHead::zeros(cfg.qswap.k_base, d, 4.0);
    w.bev_rad = SamplingHead::zeros(cfg.qswap.k_base, d, 4.0);
    w.pv = SamplingHead::zeros(cfg.k_pv, d, 8.0);
    w.agg = {Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d)};
    w.qmix = MhaWeights::zeros(d);
    w.post_self = MhaWeights::zeros(d);
    w.ffn = FfnWeights::zeros(d);
    w.head = {Matrix(cfg.num_classes, d), Matrix(1, cfg.num_classes), Matrix(kBoxOutputs, d), Matrix(1, kBoxOutputs)};
    return w;
  }

  /// Visits every tensor as (name, matrix) in a fixed order.
  template <class F>
  void for_each(F&& f) {
    visit_all(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit_all(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_all(Self& s, F& f) {
    static constexpr std::array<const char*, kNumQueryTypes> tnames{"img", "rad", "w"};
    for (std::size_t t = 0; t < kNumQueryTypes; ++t) {
      const std::string p = std::string("adapter.") + tnames[t] + ".";
      f(p + "w_in", s.adapters[t].w_in);
      f(p + "b_in", s.adapters[t].b_in);
      f(p + "w_out", s.adapters[t].w_out);
      f(p + "b_out", s.adapters[t].b_out);
    }
    f(std::string("type_embedding"), s.type_embedding);
    visit_mha("self_attn.", s.self_attn, f);
    f(std::string("self_norm.gamma"), s.self_norm_gamma);
    f(std::string("self_norm.beta"), s.self_norm_beta);
    visit_head("sample.img_bev.", s.bev_img, f);
    visit_head("sample.rad_bev.", s.bev_rad, f);
    visit_head("sample.pv.", s.pv, f);
    f(std::string("agg.wq"), s.agg.wq);
    f(std::string("agg.bq"), s.agg.bq);
    f(std::string("agg.wk"), s.agg.wk);
    f(std::string("agg.bk"), s.agg.bk);
    f(std::string("agg.wv"), s.agg.wv);
    f(std::string("agg.bv"), s.agg.bv);
    f(std::string("agg.wo"), s.agg.wo);
    f(std::string("agg.bo"), s.agg.bo);
    visit_mha("qmix.", s.qmix, f);
    visit_mha("post_self.", s.post_self, f);
    f(std::string("ffn.norm.gamma"), s.ffn.norm_gamma);
    f(std::string("ffn.norm.beta"), s.ffn.norm_beta);
    f(std::string("ffn.w1"), s.ffn.w1);
    f(std::string("ffn.b1"), s.ffn.b1);
    f(std::string("ffn.w2"), s.ffn.w2);
    f(std::string("ffn.b2"), s.ffn.b2);
    f(std::string("head.w_cls"), s.head.w_cls);
    f(std::string("head.b_cls"), s.head.b_cls);
    f(std::string("head.w_box"), s.head.w_box);
    f(std::string("head.b_box"), s.head.b_box);
  }
  template <class M, class F>
  static void visit_mha(const std::string& p, M& m, F& f) {
    f(p + "wq", m.wq);
    f(p + "bq", m.bq);
    f(p + "wk", m.wk);
    f(p + "bk", m.bk);
    f(p + "wv", m.wv);
    f(p + "bv", m.bv);
    f(p + "wo", m.wo);
    f(p + "bo", m.bo);
  }
  template <class H, class F>
  static void visit_head(const std::string& p, H& h, F& f) {
    f(p + "w", h.w);
    f(p + "b", h.b);
    f(p + "range", h.range);
  }
};

/// Rendered scene inputs consumed by the decoder.
struct SceneFeatures {
  FeatureGrid img_bev;
  FeatureGrid rad_bev;
  std::vector<PvFeatureMap> pv;
  CameraRig rig;
};

struct Box3D {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};  ///< (w, l, h)
  double yaw = 0.0;
  std::array<double, 2> velocity{0, 0};
};

struct LayerOutput {
  Matrix class_scores;  ///< N×C, sigmoid.
  std::vector<Box3D> boxes;
  std::vector<Vec3> positions;  ///< Query positions after this layer's update.
  std::vector<Vec3> sampling_positions;  ///< Positions the layer sampled around.
  Matrix self_attn;             ///< Shared self-attention weights (the QSwap affinity).
  std::optional<Matrix> qmix_attn;
  std::optional<Matrix> post_self_attn;
  std::vector<std::array<SampleSet, 2>> sample_sets;  ///< [query][img_bev, rad_bev]
  std::vector<std::size_t> pv_tokens;                 ///< PV token count per query.

  std::vector<double> confidences() const {
    std::vector<double> c(class_scores.rows(), 0.0);
    for (std::size_t i = 0; i < class_scores.rows(); ++i) {
      auto r = class_scores.row(i);
      c[i] = r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Layer stages

/// Residual two-layer adapter per query type, then the type embedding.
inline Matrix apply_type_adapter(const Matrix& x, std::span<const QueryType> types, const DecoderWeights& w) {
  if (types.size() != x.rows()) throw DimensionError("type adapter: types length mismatch");
  Matrix out = x;
  for (std::size_t t = 0; t < kNumQueryTypes; ++t) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < types.size(); ++i) {
      if (index_of(types[i]) == t) rows.push_back(i);
    }
    if (rows.empty()) continue;
    Matrix block(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(x.row(rows[r]).begin(), x.cols(), block.row(r).begin());
    const auto& a = w.adapters[t];
    Matrix hidden = linear(block, a.w_in, a.b_in);
    for (double& v : hidden.data()) v = relu(v);
    const Matrix delta = linear(hidden, a.w_out, a.b_out);
    auto emb = w.type_embedding.row(t);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto row = out.row(rows[r]);
      auto dr = delta.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] += dr[k] + emb[k];
    }
  }
  return out;
}

/// Sinusoidal encoding of (x, y, z): d/6 frequencies per axis, sin and cos,
/// remaining channels zero.
inline Matrix positional_encoding(std::span<const Vec3> positions, std::size_t d) {
  const std::size_t nf = d / 6;
  Matrix pe(positions.size(), d);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    auto row = pe.row(i);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      for (std::size_t f = 0; f < nf; ++f) {
        const double omega = std::pow(100.0, -static_cast<double>(f) / static_cast<double>(nf));
        const double arg = positions[i][axis] * omega;
        row[axis * 2 * nf + 2 * f] = std::sin(arg);
        row[axis * 2 * nf + 2 * f + 1] = std::cos(arg);
      }
    }
  }
  return pe;
}

struct SelfAttentionResult {
  Matrix queries;
  Matrix affinity;
};

/// Unmasked attention over all queries; positions enter queries and keys only.
inline SelfAttentionResult shared_self_attention(const Matrix& x, std::span<const Vec3> positions,
                                                 const DecoderWeights& w, std::size_t heads) {
  if (positions.size() != x.rows()) throw DimensionError("self attention: positions length mismatch");
  const Matrix qk = add(x, positional_encoding(positions, x.cols()));
  auto res = multi_head_attention(qk, qk, x, nullptr, w.self_attn, heads);
  return {layer_norm(add(x, res.out), w.self_norm_gamma, w.self_norm_beta), std::move(res.attn)};
}

enum class TokenSource : std::uint8_t { img_bev, rad_bev, pv };

struct Token {
  Vector value;
  TokenSource source = TokenSource::img_bev;
  double weight = 0.0;  ///< Normalized sampling weight within its source.
};

inline const FeatureGrid& grid_for(const SceneFeatures& f, GridKind k) {
  return k == GridKind::img_bev ? f.img_bev : f.rad_bev;
}

/// Gathers BEV tokens from the (normalized) sample sets and PV tokens from
/// every camera that sees the query position.
inline std::vector<Token> sample_features(std::span<const double> embedding, const Vec3& position,
                                          const std::array<SampleSet, 2>& bev_sets, const SceneFeatures& features,
                                          const DecoderWeights& w) {
  std::vector<Token> tokens;
  for (const auto& set : bev_sets) {
    if (set.weights.size() != set.points.size()) throw ContractError("sample_features: sample set not normalized");
    for (std::size_t k = 0; k < set.points.size(); ++k) {
      const auto& p = set.points[k];
      const FeatureGrid& g = grid_for(features, p.grid);
      tokens.push_back({bilinear_sample(g, position[0] + p.offset[0], position[1] + p.offset[1]),
                        p.grid == GridKind::img_bev ? TokenSource::img_bev : TokenSource::rad_bev, set.weights[k]});
    }
  }

  const Vector raw = affine(embedding, w.pv.w, w.pv.b.data());
  const double range = w.pv.range.data().at(0);
  const std::size_t k_pv = w.pv.points();
  Vector logits;
  const std::size_t first_pv = tokens.size();
  for (std::size_t v = 0; v < features.rig.cameras.size() && v < features.pv.size(); ++v) {
    auto proj = project_to_view(position, features.rig.cameras[v]);
    if (!proj) continue;
    for (std::size_t k = 0; k < k_pv; ++k) {
      tokens.push_back({sample_pv(features.pv[v], proj->u + range * raw[3 * k], proj->v + range * raw[3 * k + 1]),
                        TokenSource::pv, 0.0});
      logits.push_back(raw[3 * k + 2]);
    }
  }
  if (!logits.empty()) {
    const Vector pw = softmax(logits);
    for (std::size_t t = 0; t < pw.size(); ++t) tokens[first_pv + t].weight = pw[t];
  }
  return tokens;
}

/// Single-query cross-attention over its tokens. Logits are the scaled
/// content similarity plus the log sampling weight; the result is added to
/// the query. Zero tokens leave the query unchanged.
inline Vector aggregate_features(std::span<const double> embedding, std::span<const Token> tokens,
                                 const AggregationWeights& w) {
  Vector out(embedding.begin(), embedding.end());
  if (tokens.empty()) return out;
  const std::size_t d = embedding.size();
  const Vector qp = affine(embedding, w.wq, w.bq.data());
  // (Wq·q + bq)·(Wk·x + bk) = (Wkᵀ·qp)·x + qp·bk
  Vector key_dir(d, 0.0);
  for (std::size_t o = 0; o < d; ++o) {
    auto wk = w.wk.row(o);
    for (std::size_t k = 0; k < d; ++k) key_dir[k] += qp[o] * wk[k];
  }
  const double key_bias = dot(qp, w.bk.data());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Vector logits(tokens.size(), 0.0);
  std::vector<Gate> gates(tokens.size(), Gate::open);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (!(tokens[t].weight > 0.0)) {
      gates[t] = Gate::blocked;
      continue;
    }
    logits[t] = (dot(key_dir, tokens[t].value) + key_bias) * scale + std::log(tokens[t].weight);
  }
  if (std::none_of(gates.begin(), gates.end(), [](Gate g) { return g == Gate::open; })) return out;
  masked_softmax_inplace(logits, gates);

  // Σ a_t (Wv·x_t + bv) = Wv·(Σ a_t x_t) + bv since the weights sum to one.
  Vector mix(d, 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (logits[t] == 0.0) continue;
    for (std::size_t k = 0; k < d; ++k) mix[k] += logits[t] * tokens[t].value[k];
  }
  const Vector value = affine(mix, w.wv, w.bv.data());
  const Vector proj = affine(value, w.wo, w.bo.data());
  for (std::size_t k = 0; k < d; ++k) out[k] += proj[k];
  return out;
}

struct HeadOutput {
  Vector class_scores;
  Box3D box;
};

/// Class scores and a box refined from the current position. The box center
/// becomes the query's next position.
inline HeadOutput detection_head(std::span<const double> embedding, const Vec3& position, const HeadWeights& w,
                                 const DecoderConfig& cfg) {
  HeadOutput out;
  out.class_scores = affine(embedding, w.w_cls, w.b_cls.data());
  for (double& s : out.class_scores) s = sigmoid(s);
  const Vector r = affine(embedding, w.w_box, w.b_box.data());
  out.box.center = {std::clamp(position[0] + r[0], -cfg.extent, cfg.extent),
                    std::clamp(position[1] + r[1], -cfg.extent, cfg.extent),
                    std::clamp(position[2] + r[2], cfg.z_min, cfg.z_max)};
  for (int a = 0; a < 3; ++a) out.box.size[a] = std::clamp(std::exp(r[3 + a]), 0.1, 30.0);
  const double yaw = std::atan2(r[6], r[7]);
  out.box.yaw = yaw <= -std::numbers::pi ? std::numbers::pi : yaw;
  out.box.velocity = {r[8], r[9]};
  return out;
}

// ---------------------------------------------------------------------------
// Full decode

struct DecodeOptions {
  bool keep_sample_sets = true;
};

/// Runs all layers with the shared weight set. Layer order: type adapter and
/// embedding, shared self-attention, BEV base sampling, QSwap, feature
/// gathering and aggregation, cross-type attention (per placement), MLP,
/// detection head and position update.
inline std::vector<LayerOutput> decode(const SceneFeatures& features, const QuerySet& init, const DecoderWeights& w,
                                       const DecoderConfig& cfg, const DecodeOptions& opts = {}) {
  cfg.validate();
  init.validate();
  if (init.dim() != cfg.dim) throw DimensionError("decode: query width does not match decoder dim");
  if (features.img_bev.dim != cfg.dim || features.rad_bev.dim != cfg.dim) {
    throw DimensionError("decode: BEV feature width does not match decoder dim");
  }
  if (w.bev_img.points() != cfg.qswap.k_base || w.pv.points() != cfg.k_pv || w.head.w_cls.rows() != cfg.num_classes ||
      w.type_embedding.cols() != cfg.dim) {
    throw DimensionError("decode: weights do not match the decoder config");
  }

  const std::size_t n = init.size();
  const std::span<const QueryType> types = init.types;
  Matrix x = init.embeddings;
  std::vector<Vec3> positions = init.positions;
  std::vector<BoxState> boxes = init.boxes;
  std::vector<LayerOutput> outputs;

  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    LayerOutput lo;
    x = apply_type_adapter(x, types, w);
    auto sa = shared_self_attention(x, positions, w, cfg.heads);
    x = std::move(sa.queries);
    lo.self_attn = std::move(sa.affinity);

    const bool qmix_on = cfg.enable_qmix && n > 0;
    if (qmix_on && cfg.placement == QmixPlacement::pre_agg) {
      const AttentionMask mask = build_cross_type_mask(types);
      auto r = multi_head_attention(x, x, x, mask, w.qmix, cfg.heads);
      x = add(x, r.out);
      lo.qmix_attn = std::move(r.attn);
    }

    std::array<std::vector<SampleSet>, 2> sets;
    for (std::size_t g = 0; g < 2; ++g) {
      const GridKind kind = g == 0 ? GridKind::img_bev : GridKind::rad_bev;
      const SamplingHead& head = g == 0 ? w.bev_img : w.bev_rad;
      sets[g].resize(n);
      for (std::size_t i = 0; i < n; ++i) sets[g][i].points = predict_base_samples(x.row(i), head, kind, i);
    }
    if (cfg.enable_qswap && n > 1) {
      std::vector<std::vector<std::size_t>> neighbors(n);
      for (std::size_t i = 0; i < n; ++i) {
        neighbors[i] = select_neighbors(i, lo.self_attn.row(i), boxes, positions, cfg.qswap);
      }
      for (auto& s : sets) s = swap_samples(s, positions, neighbors, lo.self_attn, cfg.qswap);
    }
    for (auto& s : sets) {
      for (auto& set : s) normalize_sample_scores(set);
    }

    Matrix aggregated(n, cfg.dim);
    lo.pv_tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::array<SampleSet, 2> mine{std::move(sets[0][i]), std::move(sets[1][i])};
      const auto tokens = sample_features(x.row(i), positions[i], mine, features, w);
      lo.pv_tokens[i] = static_cast<std::size_t>(
          std::count_if(tokens.begin(), tokens.end(), [](const Token& t) { return t.source == TokenSource::pv; }));
      const Vector upd = aggregate_features(x.row(i), tokens, w.agg);
      std::copy(upd.begin(), upd.end(), aggregated.row(i).begin());
      if (opts.keep_sample_sets) lo.sample_sets.push_back(mine);
    }
    x = std::move(aggregated);

    if (qmix_on && cfg.placement == QmixPlacement::post_agg) {
      auto r = qmix_attention(x, types, w.qmix, w.ffn, cfg.heads);
      x = std::move(r.queries);
      lo.qmix_attn = std::move(r.attn);
    } else {
      if (qmix_on && (cfg.placement == QmixPlacement::post_self || cfg.placement == QmixPlacement::post_self_cross)) {
        auto r = multi_head_attention(x, x, x, nullptr, w.post_self, cfg.heads);
        x = add(x, r.out);
        lo.post_self_attn = std::move(r.attn);
      }
      if (qmix_on && cfg.placement == QmixPlacement::post_self_cross) {
        const AttentionMask mask = build_cross_type_mask(types);
        auto r = multi_head_attention(x, x, x, mask, w.qmix, cfg.heads);
        x = add(x, r.out);
        lo.qmix_attn = std::move(r.attn);
      }
      x = ffn_block(x, w.ffn);
    }

    lo.sampling_positions = positions;
    lo.class_scores = Matrix(n, cfg.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
      auto h = detection_head(x.row(i), positions[i], w.head, cfg);
      std::copy(h.class_scores.begin(), h.class_scores.end(), lo.class_scores.row(i).begin());
      positions[i] = h.box.center;
      boxes[i] = {h.box.size[0], h.box.size[1], h.box.size[2], h.box.yaw};
      lo.boxes.push_back(h.box);
    }
    lo.positions = positions;
    outputs.push_back(std::move(lo));
  }
  return outputs;
}

}  // namespace hqf
