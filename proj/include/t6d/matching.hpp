#pragma once

// Set-prediction data types, pair-wise matching costs, and the optimal assignment solver.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t6d/boxes.hpp"
#include "t6d/errors.hpp"
#include "t6d/geometry.hpp"

namespace t6d {

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

/// Probabilities over C real classes plus the no-object slot at index C.
struct ClassDistribution {
  std::vector<double> probs;

  static ClassDistribution from_logits(std::span<const double> logits) { return {softmax(logits)}; }
  int num_classes() const { return static_cast<int>(probs.size()) - 1; }
  int no_object_index() const { return num_classes(); }
  bool is_valid(double tol = 1e-6) const {
    double s = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) return false;
      s += p;
    }
    return !probs.empty() && std::abs(s - 1.0) <= tol;
  }
};

/// One decoder slot's raw outputs.
struct PredictionTuple {
  std::vector<double> class_logits;  // C + 1 entries, last one is no-object
  BBox bbox;
  Rot6D rot6d;
  Translation translation = Translation::Zero();

  ClassDistribution distribution() const { return ClassDistribution::from_logits(class_logits); }
  Rotation rotation() const { return rot6d_to_matrix(rot6d); }
};

struct PredictionSet {
  std::vector<PredictionTuple> tuples;

  std::size_t size() const { return tuples.size(); }
};

struct GroundTruthObject {
  int class_id = 0;  // also the key into the per-class model point table
  BBox bbox;
  Pose pose;
};

struct TargetSet {
  std::vector<GroundTruthObject> objects;

  std::size_t size() const { return objects.size(); }
};

/// Injective ground-truth -> prediction-slot map.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (gt_index, pred_index), sorted by gt index

  /// Inverse lookup: gt index matched to each slot, or -1.
  std::vector<int> slot_to_gt(std::size_t num_slots) const {
    std::vector<int> out(num_slots, -1);
    for (auto [g, p] : pairs) out.at(p) = g;
    return out;
  }

  bool is_valid(std::size_t n, std::size_t num_slots) const {
    if (pairs.size() != n) return false;
    std::vector<bool> seen_gt(n, false), seen_pred(num_slots, false);
    for (auto [g, p] : pairs) {
      if (g < 0 || p < 0 || static_cast<std::size_t>(g) >= n || static_cast<std::size_t>(p) >= num_slots) return false;
      if (seen_gt[g] || seen_pred[p]) return false;
      seen_gt[g] = seen_pred[p] = true;
    }
    return true;
  }
};

enum class MatchVariant { object_only, with_pose };

inline std::string to_string(MatchVariant v) { return v == MatchVariant::object_only ? "object_only" : "with_pose"; }

inline MatchVariant parse_match_variant(const std::string& s) {
  if (s == "object_only" || s == "object-only") return MatchVariant::object_only;
  if (s == "with_pose" || s == "with-pose") return MatchVariant::with_pose;
  throw ConfigError("unknown matching variant '" + s + "'");
}

struct MatchCostConfig {
  MatchVariant variant = MatchVariant::object_only;
  double box_l1_weight = 5.0;
  double box_giou_weight = 2.0;

  void validate() const {
    if (!(box_l1_weight >= 0.0) || !(box_giou_weight >= 0.0)) throw ConfigError("matching weights must be >= 0");
  }
};

using CostMatrix = Eigen::MatrixXd;

/// -p(c) + L_box, plus angular distance and translation distance for the with_pose variant.
inline double pairwise_match_cost(const GroundTruthObject& gt, const PredictionTuple& pred, const MatchCostConfig& cfg) {
  const auto probs = softmax(pred.class_logits);
  if (gt.class_id < 0 || gt.class_id + 1 >= static_cast<int>(probs.size()))
    throw ConfigError("ground-truth class id " + std::to_string(gt.class_id) + " out of range");
  double cost = -probs[gt.class_id] + box_loss(gt.bbox, pred.bbox, cfg.box_giou_weight, cfg.box_l1_weight);
  if (cfg.variant == MatchVariant::with_pose) {
    cost += angular_distance(gt.pose.rotation, pred.rotation());
    cost += (gt.pose.translation - pred.translation).norm();
  }
  return cost;
}

inline CostMatrix build_cost_matrix(const TargetSet& targets, const PredictionSet& preds, const MatchCostConfig& cfg) {
  const auto n = targets.size();
  const auto slots = preds.size();
  if (n > slots)
    throw CardinalityError(std::to_string(n) + " targets exceed the " + std::to_string(slots) + " prediction slots");
  CostMatrix cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(slots));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < slots; ++j) cost(i, j) = pairwise_match_cost(targets.objects[i], preds.tuples[j], cfg);
  return cost;
}

namespace detail {

/// Square assignment via shortest augmenting paths with potentials; returns row -> column.
inline std::vector<int> solve_square_assignment(const CostMatrix& a) {
  const int n = static_cast<int>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost injective assignment of the n rows (targets) to the N columns (slots).
inline Assignment hungarian_assign(const CostMatrix& cost) {
  const auto n = cost.rows();
  const auto slots = cost.cols();
  if (n > slots)
    throw CardinalityError(std::to_string(n) + " targets exceed the " + std::to_string(slots) + " prediction slots");
  Assignment out;
  if (n == 0) return out;
  if (!cost.allFinite()) throw DegenerateInput("cost matrix contains non-finite entries");

  // Pad to square with a constant row value large enough never to matter for real rows.
  const double pad = (cost.maxCoeff() - cost.minCoeff() + 1.0) * static_cast<double>(slots);
  CostMatrix square = CostMatrix::Constant(slots, slots, pad);
  square.topRows(n) = cost;
  const auto row_to_col = detail::solve_square_assignment(square);
  out.pairs.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.pairs.emplace_back(static_cast<int>(i), row_to_col[i]);
  return out;
}

/// Sum of the selected entries, accumulated in ground-truth order.
inline double assignment_cost(const CostMatrix& cost, const Assignment& a) {
  double total = 0.0;
  for (auto [g, p] : a.pairs) total += cost(g, p);
  return total;
}

}  // namespace t6d
