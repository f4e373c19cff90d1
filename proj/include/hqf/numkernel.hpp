// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hqf/errors.hpp"
#include "hqf/grid.hpp"
#include "hqf/tensor.hpp"

namespace hqf {

/// y = W·x + b.
inline Vector affine(std::span<const double> x, const Matrix& w, std::span<const double> b) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw DimensionError("affine: x[" + std::to_string(x.size()) + "], W" + shape_str(w) +
                         ", b[" + std::to_string(b.size()) + "]");
  }
  Vector y(w.rows());
  for (std::size_t o = 0; o < w.rows(); ++o) y[o] = dot(w.row(o), x) + b[o];
  return y;
}

/// Entry of an additive attention mask. `blocked` stands for −∞ and never
/// enters the exponent, so blocked weights are exactly zero.
enum class Gate : std::uint8_t { open = 0, blocked = 1 };

class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, Gate fill = Gate::open)
      : rows_(rows), cols_(cols), gates_(rows * cols, fill) {}

  static AttentionMask open(std::size_t n) { return AttentionMask(n, n); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  Gate operator()(std::size_t i, std::size_t j) const { return gates_[i * cols_ + j]; }
  void set(std::size_t i, std::size_t j, Gate g) { gates_[i * cols_ + j] = g; }
  bool blocked(std::size_t i, std::size_t j) const { return (*this)(i, j) == Gate::blocked; }

  std::span<const Gate> row(std::size_t i) const { return {gates_.data() + i * cols_, cols_}; }

  /// True when every row keeps at least one open entry.
  bool rows_attendable() const {
    for (std::size_t i = 0; i < rows_; ++i) {
      auto r = row(i);
      if (std::none_of(r.begin(), r.end(), [](Gate g) { return g == Gate::open; })) return false;
    }
    return true;
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Gate> gates_;
};

/// Softmax over the open entries of a row, stabilized by the max over open
/// entries only. Throws ContractError when the whole row is blocked.
inline void masked_softmax_inplace(std::span<double> logits, std::span<const Gate> mask) {
  if (logits.size() != mask.size()) throw DimensionError("masked_softmax: logits/mask length mismatch");
  double peak = -std::numeric_limits<double>::infinity();
  bool any_open = false;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j] == Gate::open) {
      any_open = true;
      peak = std::max(peak, logits[j]);
    }
  }
  if (!any_open) throw ContractError("masked_softmax: every entry of the row is blocked");
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j] == Gate::open) {
      logits[j] = std::exp(logits[j] - peak);
      total += logits[j];
    } else {
      logits[j] = 0.0;
    }
  }
  for (double& v : logits) v /= total;
}

inline Vector masked_softmax(std::span<const double> logits, std::span<const Gate> mask) {
  Vector out(logits.begin(), logits.end());
  masked_softmax_inplace(out, mask);
  return out;
}

inline Vector softmax(std::span<const double> logits) {
  std::vector<Gate> open(logits.size(), Gate::open);
  return masked_softmax(logits, open);
}

/// Projection tensors of one multi-head attention block (all d×d / 1×d).
struct MhaWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;

  static MhaWeights zeros(std::size_t d) {
    return {Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d),
            Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d)};
  }
  static MhaWeights identity(std::size_t d) {
    auto w = zeros(d);
    w.wq = w.wk = w.wv = w.wo = Matrix::identity(d);
    return w;
  }
  std::size_t dim() const { return wq.rows(); }
};

struct AttentionResult {
  Matrix out;   ///< N_q×d, after the output projection.
  Matrix attn;  ///< N_q×N_k head-averaged post-softmax weights.
};

/// Scaled dot-product multi-head attention with an optional additive mask
/// (nullptr means fully open).
inline AttentionResult multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                            const AttentionMask* mask, const MhaWeights& w,
                                            std::size_t heads) {
  const std::size_t d = w.dim();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: " + std::to_string(heads) +
                      " heads do not divide model width " + std::to_string(d));
  }
  if (q.cols() != d || k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("multi_head_attention: Q" + shape_str(q) + " K" + shape_str(k) + " V" +
                         shape_str(v) + " for width " + std::to_string(d));
  }
  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  if (mask != nullptr && (mask->rows() != nq || mask->cols() != nk)) {
    throw DimensionError("multi_head_attention: mask shape does not match Q/K");
  }

  const Matrix qp = linear(q, w.wq, w.bq);
  const Matrix kp = linear(k, w.wk, w.bk);
  const Matrix vp = linear(v, w.wv, w.bv);
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<Gate> open_row(mask == nullptr ? nk : 0, Gate::open);

  Matrix ctx(nq, d);
  Matrix attn(nq, nk);
  constexpr std::size_t kBlock = 4;  // queries processed together to reuse key/value loads
  Matrix logits(kBlock, nk);
  Matrix kt(dh, nk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    // Per-head keys transposed so each logit row is a sweep of axpys.
    for (std::size_t j = 0; j < nk; ++j) {
      for (std::size_t t = 0; t < dh; ++t) kt(t, j) = kp(j, off + t);
    }
    for (std::size_t i0 = 0; i0 < nq; i0 += kBlock) {
      const std::size_t nb = std::min(kBlock, nq - i0);
      std::fill(logits.data().begin(), logits.data().end(), 0.0);
      for (std::size_t t = 0; t < dh; ++t) {
        const double* __restrict kr = kt.row(t).data();
        for (std::size_t b = 0; b < nb; ++b) {
          const double a = qp(i0 + b, off + t);
          double* __restrict lg = logits.row(b).data();
          for (std::size_t j = 0; j < nk; ++j) lg[j] += a * kr[j];
        }
      }
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t i = i0 + b;
        auto lg = logits.row(b);
        for (double& v : lg) v *= scale;
        masked_softmax_inplace(lg, mask == nullptr ? std::span<const Gate>(open_row) : mask->row(i));
        auto ai = attn.row(i);
        for (std::size_t j = 0; j < nk; ++j) ai[j] += lg[j];
      }
      for (std::size_t j = 0; j < nk; ++j) {
        const double* __restrict vj = vp.row(j).data() + off;
        for (std::size_t b = 0; b < nb; ++b) {
          const double p = logits(b, j);
          if (p == 0.0) continue;
          double* __restrict ci = ctx.row(i0 + b).data() + off;
          for (std::size_t t = 0; t < dh; ++t) ci[t] += p * vj[t];
        }
      }
    }
  }
  const double inv_heads = 1.0 / static_cast<double>(heads);
  for (double& a : attn.data()) a *= inv_heads;
  return {linear(ctx, w.wo, w.bo), std::move(attn)};
}

inline AttentionResult multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                            const AttentionMask& mask, const MhaWeights& w,
                                            std::size_t heads) {
  return multi_head_attention(q, k, v, &mask, w, heads);
}

}  // namespace hqf
