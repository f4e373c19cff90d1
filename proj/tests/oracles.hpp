// SPDX-License-Identifier: Apache-2.0
// Reference implementations used only by the tests. They are written as
// plain loops with no shared helpers from the library, so that agreement
// with the optimized code is meaningful.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "hqf/camera.hpp"
#include "hqf/grid.hpp"
#include "hqf/numkernel.hpp"
#include "hqf/qmix.hpp"
#include "hqf/qswap.hpp"
#include "hqf/queries.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const hqf::Matrix& m) {
  Rows r(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  }
  return r;
}

/// y = W x + b with a straight triple-free double loop.
inline std::vector<double> affine(const std::vector<double>& x, const Rows& w, const std::vector<double>& b) {
  std::vector<double> y(w.size());
  for (std::size_t o = 0; o < w.size(); ++o) {
    long double acc = 0.0L;
    for (std::size_t k = 0; k < x.size(); ++k) acc += static_cast<long double>(w[o][k]) * x[k];
    y[o] = static_cast<double>(acc + b[o]);
  }
  return y;
}

/// X Wᵀ + b row by row.
inline Rows project(const Rows& x, const hqf::Matrix& w, const hqf::Matrix& b) {
  const Rows wr = to_rows(w);
  std::vector<double> bias(b.data().begin(), b.data().end());
  Rows out;
  for (const auto& row : x) out.push_back(affine(row, wr, bias));
  return out;
}

struct AttentionOut {
  Rows out;
  Rows attn;
};

/// Dense multi-head attention with an additive mask of 0 / −∞ entries.
/// `blocked[i][j]` marks −∞.
inline AttentionOut attention(const Rows& q, const Rows& k, const Rows& v,
                              const std::vector<std::vector<bool>>& blocked, const hqf::MhaWeights& w,
                              std::size_t heads) {
  const std::size_t d = w.wq.rows();
  const std::size_t dh = d / heads;
  const Rows qp = project(q, w.wq, w.bq);
  const Rows kp = project(k, w.wk, w.bk);
  const Rows vp = project(v, w.wv, w.bv);
  const std::size_t nq = q.size(), nk = k.size();
  Rows ctx(nq, std::vector<double>(d, 0.0));
  Rows attn(nq, std::vector<double>(nk, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        long double acc = 0.0L;
        for (std::size_t t = 0; t < dh; ++t) acc += static_cast<long double>(qp[i][h * dh + t]) * kp[j][h * dh + t];
        const double add = blocked.empty() || !blocked[i][j] ? 0.0 : -std::numeric_limits<double>::infinity();
        s[j] = static_cast<double>(acc) / std::sqrt(static_cast<double>(dh)) + add;
      }
      const double m = *std::max_element(s.begin(), s.end());
      long double z = 0.0L;
      for (double& x : s) {
        x = std::exp(x - m);
        z += x;
      }
      for (std::size_t j = 0; j < nk; ++j) {
        const double p = static_cast<double>(s[j] / z);
        attn[i][j] += p / static_cast<double>(heads);
        for (std::size_t t = 0; t < dh; ++t) ctx[i][h * dh + t] += p * vp[j][h * dh + t];
      }
    }
  }
  return {project(ctx, w.wo, w.bo), attn};
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const hqf::Matrix& g, const hqf::Matrix& b) {
  long double mean = 0.0L, var = 0.0L;
  for (double v : x) mean += v;
  mean /= x.size();
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  std::vector<double> y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    y[k] = static_cast<double>((x[k] - mean) / std::sqrt(var + 1e-5L)) * g.data()[k] + b.data()[k];
  }
  return y;
}

/// Q' = H + W2·relu(W1·LN(H) + b1) + b2 with H = Q + attention(Q; cross-type mask).
inline AttentionOut qmix(const Rows& q, const std::vector<hqf::QueryType>& types, const hqf::MhaWeights& mha,
                         const hqf::FfnWeights& ffn, std::size_t heads) {
  const std::size_t n = q.size();
  std::vector<std::vector<bool>> blocked(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) blocked[i][j] = i != j && types[i] == types[j];
  }
  AttentionOut a = attention(q, q, q, blocked, mha, heads);
  const Rows w1 = to_rows(ffn.w1), w2 = to_rows(ffn.w2);
  const std::vector<double> b1(ffn.b1.data().begin(), ffn.b1.data().end());
  const std::vector<double> b2(ffn.b2.data().begin(), ffn.b2.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> h(q[i].size());
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = q[i][k] + a.out[i][k];
    auto hidden = affine(layer_norm(h, ffn.norm_gamma, ffn.norm_beta), w1, b1);
    for (double& v : hidden) v = std::max(v, 0.0);
    const auto mlp = affine(hidden, w2, b2);
    for (std::size_t k = 0; k < h.size(); ++k) a.out[i][k] = h[k] + mlp[k];
  }
  return a;
}

/// Bilinear sample as a sum over every cell of a tent-function weight.
inline std::vector<double> bilinear(const hqf::FeatureGrid& g, double x, double y) {
  std::vector<double> out(g.dim, 0.0);
  if (x < g.layout.x_min || x > g.layout.x_max || y < g.layout.y_min || y > g.layout.y_max) return out;
  double fc = (x - g.layout.x_min) / g.layout.voxel - 0.5;
  double fr = (y - g.layout.y_min) / g.layout.voxel - 0.5;
  fc = std::min(std::max(fc, 0.0), static_cast<double>(g.width - 1));
  fr = std::min(std::max(fr, 0.0), static_cast<double>(g.height - 1));
  for (std::size_t r = 0; r < g.height; ++r) {
    const double wr = std::max(0.0, 1.0 - std::abs(fr - static_cast<double>(r)));
    if (wr == 0.0) continue;
    for (std::size_t c = 0; c < g.width; ++c) {
      const double wc = std::max(0.0, 1.0 - std::abs(fc - static_cast<double>(c)));
      if (wc == 0.0) continue;
      for (std::size_t k = 0; k < g.dim; ++k) out[k] += wr * wc * g.data[(r * g.width + c) * g.dim + k];
    }
  }
  return out;
}

struct Pixel {
  bool valid = false;
  double u = 0, v = 0, depth = 0;
};

/// Projection through the 3×4 camera matrix P = K·[R | −R·C] in homogeneous
/// coordinates.
inline Pixel project(const hqf::Vec3& p, const hqf::Camera& cam) {
  double P[3][4];
  const double K[3][3] = {{cam.fx, 0, cam.cx}, {0, cam.fy, cam.cy}, {0, 0, 1}};
  double Rt[3][4];
  for (int r = 0; r < 3; ++r) {
    double t = 0;
    for (int c = 0; c < 3; ++c) {
      Rt[r][c] = cam.rotation[r][c];
      t -= cam.rotation[r][c] * cam.center[c];
    }
    Rt[r][3] = t;
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      P[r][c] = 0;
      for (int k = 0; k < 3; ++k) P[r][c] += K[r][k] * Rt[k][c];
    }
  }
  const double X[4] = {p[0], p[1], p[2], 1.0};
  double h[3] = {0, 0, 0};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) h[r] += P[r][c] * X[c];
  }
  Pixel px;
  px.depth = h[2];
  if (!(h[2] > 0.1)) return px;
  px.u = h[0] / h[2];
  px.v = h[1] / h[2];
  px.valid = px.u >= 0 && px.u < cam.width && px.v >= 0 && px.v < cam.height;
  return px;
}

/// Best admissible subset of a candidate pool by exhaustive enumeration:
/// largest cardinality under both caps, then the largest total score.
inline std::vector<std::size_t> best_selection(const std::vector<hqf::SwapCandidate>& pool, std::size_t k_per,
                                               std::size_t k_extra) {
  const std::size_t n = pool.size();
  std::vector<std::size_t> best;
  double best_sum = -std::numeric_limits<double>::infinity();
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    std::vector<std::size_t> pick;
    std::vector<std::size_t> per;
    double sum = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1ul)) continue;
      pick.push_back(i);
      sum += pool[i].ranked_score;
      if (per.size() <= pool[i].neighbor) per.resize(pool[i].neighbor + 1, 0);
      if (++per[pool[i].neighbor] > k_per) ok = false;
    }
    if (!ok || pick.size() > k_extra) continue;
    if (pick.size() > best.size() || (pick.size() == best.size() && sum > best_sum)) {
      best = pick;
      best_sum = sum;
    }
  }
  return best;
}

/// Random matrix with entries in [−scale, scale].
inline hqf::Matrix random_matrix(std::mt19937_64& g, std::size_t r, std::size_t c, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  hqf::Matrix m(r, c);
  for (double& v : m.data()) v = u(g);
  return m;
}

inline hqf::MhaWeights random_mha(std::mt19937_64& g, std::size_t d) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {random_matrix(g, d, d, s), random_matrix(g, 1, d, 0.1), random_matrix(g, d, d, s),
          random_matrix(g, 1, d, 0.1), random_matrix(g, d, d, s), random_matrix(g, 1, d, 0.1),
          random_matrix(g, d, d, s), random_matrix(g, 1, d, 0.1)};
}

inline hqf::FfnWeights random_ffn(std::mt19937_64& g, std::size_t d) {
  hqf::FfnWeights f = hqf::FfnWeights::zeros(d);
  f.norm_gamma = random_matrix(g, 1, d, 1.0);
  for (double& v : f.norm_gamma.data()) v += 1.5;
  f.norm_beta = random_matrix(g, 1, d, 0.2);
  f.w1 = random_matrix(g, 4 * d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  f.b1 = random_matrix(g, 1, 4 * d, 0.1);
  f.w2 = random_matrix(g, d, 4 * d, 0.5 / std::sqrt(static_cast<double>(d)));
  f.b2 = random_matrix(g, 1, d, 0.1);
  return f;
}

inline std::vector<hqf::QueryType> random_types(std::mt19937_64& g, std::size_t n) {
  std::uniform_int_distribution<int> u(0, 2);
  std::vector<hqf::QueryType> t(n);
  for (auto& x : t) x = static_cast<hqf::QueryType>(u(g));
  return t;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace oracle
