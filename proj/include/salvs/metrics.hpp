#pragma once

// Segmentation metrics: IoU (mean and cumulative), MAE and max F-measure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "salvs/error.hpp"
#include "salvs/saliency.hpp"

namespace salvs::metrics {

struct EvalPair {
  SaliencyMap pred;
  SaliencyMap gt;
};

/// Exact pixel counts behind IoU; summing them is order independent.
struct IouCounts {
  std::int64_t intersection = 0;
  std::int64_t uni = 0;

  double iou() const { return uni == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(uni); }
};

inline IouCounts iou_counts(const SaliencyMap& pred, const SaliencyMap& gt, double tau = 0.5) {
  require_same_shape(pred, gt);
  IouCounts c;
  const auto p = pred.values();
  const auto g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] >= tau;
    const bool b = g[i] >= 0.5;
    c.intersection += a && b;
    c.uni += a || b;
  }
  return c;
}

inline double iou(const SaliencyMap& pred, const SaliencyMap& gt, double tau = 0.5) {
  return iou_counts(pred, gt, tau).iou();
}

inline double miou(std::span<const EvalPair> pairs, double tau = 0.5) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyDataset, "mIoU over an empty dataset");
  double sum = 0.0;
  for (const auto& p : pairs) sum += iou(p.pred, p.gt, tau);
  return sum / static_cast<double>(pairs.size());
}

/// Cumulative IoU: total intersection over total union, accumulated per pair.
inline double ciou(std::span<const EvalPair> pairs, double tau = 0.5) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyDataset, "cIoU over an empty dataset");
  IouCounts total;
  for (const auto& p : pairs) {
    const auto c = iou_counts(p.pred, p.gt, tau);
    total.intersection += c.intersection;
    total.uni += c.uni;
  }
  return total.iou();
}

inline double mae(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_same_shape(pred, gt);
  const auto p = pred.values();
  const auto g = gt.values();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - g[i]);
  return s / static_cast<double>(p.size());
}

inline double f_beta(std::int64_t tp, std::int64_t predicted, std::int64_t actual, double beta2) {
  if (predicted == 0 || actual == 0 || tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
  const double recall = static_cast<double>(tp) / static_cast<double>(actual);
  return (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
}

/// F-measure at each threshold t_k = k / (levels - 1), binarising pred > t_k.
inline std::vector<double> f_measure_curve(const SaliencyMap& pred, const SaliencyMap& gt, double beta2 = 0.3,
                                           int levels = 256) {
  require_same_shape(pred, gt);
  if (levels < 2) throw Error(ErrorCode::InvalidArgument, "need at least two thresholds");
  const auto p = pred.values();
  const auto g = gt.values();
  const int top = levels - 1;
  auto threshold = [top](int k) { return static_cast<double>(k) / top; };
  // Pixels count as positive strictly above a threshold, so an all-zero map
  // predicts nothing. Histogram by the highest threshold index exceeded (-1: none).
  std::vector<std::int64_t> pos(static_cast<std::size_t>(levels) + 1, 0), all(pos.size(), 0);
  std::int64_t actual = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    int k = static_cast<int>(std::floor(std::clamp(p[i], -1.0, 2.0) * top));
    k = std::clamp(k, -1, top);
    while (k < top && p[i] > threshold(k + 1)) ++k;
    while (k >= 0 && !(p[i] > threshold(k))) --k;
    const bool b = g[i] >= 0.5;
    actual += b;
    all[static_cast<std::size_t>(k + 1)] += 1;
    pos[static_cast<std::size_t>(k + 1)] += b;
  }
  std::vector<double> curve(static_cast<std::size_t>(levels));
  std::int64_t tp = 0, predicted = 0;
  for (int k = top; k >= 0; --k) {
    tp += pos[static_cast<std::size_t>(k + 1)];
    predicted += all[static_cast<std::size_t>(k + 1)];
    curve[static_cast<std::size_t>(k)] = f_beta(tp, predicted, actual, beta2);
  }
  return curve;
}

inline double max_f_measure(const SaliencyMap& pred, const SaliencyMap& gt, double beta2 = 0.3, int levels = 256) {
  const auto curve = f_measure_curve(pred, gt, beta2, levels);
  return *std::max_element(curve.begin(), curve.end());
}

}  // namespace salvs::metrics
