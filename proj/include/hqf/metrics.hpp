// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "hqf/errors.hpp"

namespace hqf {

struct Detection {
  std::array<double, 2> center{0, 0};
  std::array<double, 3> size{1, 1, 1};
  double yaw = 0.0;
  int class_id = 0;
  double confidence = 1.0;
};

struct Match {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::vector<long> gt_of_pred;  ///< −1 when the prediction is unmatched.
  std::vector<Match> matches;
};

/// Prediction indices by descending confidence, ties by lower index.
inline std::vector<std::size_t> confidence_order(std::span<const Detection> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  return order;
}

/// Greedy per-class matching: each prediction, in descending confidence,
/// takes the nearest unmatched same-class ground truth within the threshold.
inline MatchResult match_detections(std::span<const Detection> preds, std::span<const Detection> gts,
                                    double threshold_m) {
  MatchResult r;
  r.gt_of_pred.assign(preds.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t p : confidence_order(preds)) {
    long best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != preds[p].class_id) continue;
      const double dist = std::hypot(preds[p].center[0] - gts[g].center[0], preds[p].center[1] - gts[g].center[1]);
      if (dist <= threshold_m && dist < best_d) {
        best_d = dist;
        best = static_cast<long>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      r.gt_of_pred[p] = best;
      r.matches.push_back({p, static_cast<std::size_t>(best), best_d});
    }
  }
  return r;
}

/// 101-point interpolated AP of one class from its predictions' TP flags in
/// descending confidence order.
inline double interpolated_ap(const std::vector<bool>& tp_in_order, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < tp_in_order.size(); ++k) {
    if (tp_in_order[k]) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Precision envelope from the right.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int t = 0; t <= 100; ++t) {
    const double level = t / 100.0;
    while (k < recall.size() && recall[k] < level - 1e-12) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / 101.0;
}

struct ApReport {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> per_class;  ///< class → AP per threshold (classes with ground truth only).
  double mean = 0.0;
};

/// Center-distance AP per class and threshold; the mean runs over classes
/// that have ground truth and all thresholds.
inline ApReport average_precision(std::span<const Detection> preds, std::span<const Detection> gts,
                                  std::span<const double> thresholds = std::array{0.5, 1.0, 2.0, 4.0}) {
  ApReport rep;
  rep.thresholds.assign(thresholds.begin(), thresholds.end());
  std::map<int, std::size_t> gt_count;
  for (const auto& g : gts) ++gt_count[g.class_id];
  for (const auto& [cls, n] : gt_count) rep.per_class[cls].assign(thresholds.size(), 0.0);
  const auto order = confidence_order(preds);
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const MatchResult m = match_detections(preds, gts, thresholds[t]);
    for (auto& [cls, aps] : rep.per_class) {
      std::vector<bool> flags;
      for (std::size_t p : order) {
        if (preds[p].class_id == cls) flags.push_back(m.gt_of_pred[p] >= 0);
      }
      aps[t] = interpolated_ap(flags, gt_count[cls]);
    }
  }
  double sum = 0.0;
  std::size_t cnt = 0;
  for (const auto& [cls, aps] : rep.per_class) {
    for (double a : aps) {
      sum += a;
      ++cnt;
    }
  }
  rep.mean = cnt == 0 ? 0.0 : sum / static_cast<double>(cnt);
  return rep;
}

/// Smallest absolute difference between two headings, in [0, π].
inline double yaw_difference(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return d > std::numbers::pi ? 2.0 * std::numbers::pi - d : d;
}

struct TranslationOrientation {
  double ate = std::numeric_limits<double>::quiet_NaN();  ///< Mean BEV center distance (m).
  double aoe = std::numeric_limits<double>::quiet_NaN();  ///< Mean yaw error (rad).
};

/// Means over matched pairs; NaN when there are no matches.
inline TranslationOrientation translation_orientation_errors(std::span<const Match> matches,
                                                             std::span<const Detection> preds,
                                                             std::span<const Detection> gts) {
  TranslationOrientation out;
  if (matches.empty()) return out;
  double t = 0.0, o = 0.0;
  for (const auto& m : matches) {
    const auto& p = preds[m.pred];
    const auto& g = gts[m.gt];
    t += std::hypot(p.center[0] - g.center[0], p.center[1] - g.center[1]);
    o += yaw_difference(p.yaw, g.yaw);
  }
  out.ate = t / static_cast<double>(matches.size());
  out.aoe = o / static_cast<double>(matches.size());
  return out;
}

}  // namespace hqf
