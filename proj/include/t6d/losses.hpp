#pragma once

// Hungarian loss: class NLL, box (GIoU + L1) and pose terms over matched pairs, with analytic
// gradients with respect to every predicted quantity.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "t6d/boxes.hpp"
#include "t6d/geometry.hpp"
#include "t6d/matching.hpp"

namespace t6d {

struct LossWeights {
  double box_giou_weight = 2.0;  // alpha
  double box_l1_weight = 5.0;    // beta
  double pose_weight = 0.05;     // lambda_pose
  double eos_weight = 0.4;       // multiplier on the no-object NLL

  void validate() const {
    if (!(box_giou_weight >= 0) || !(box_l1_weight >= 0) || !(pose_weight >= 0) || !(eos_weight >= 0))
      throw ConfigError("loss weights must be >= 0");
  }
};

/// Which pose term the Hungarian loss uses.
enum class PoseLossKind {
  disentangled,    // symmetric-aware rotation loss + translation L2
  point_matching,  // coupled, symmetric-aware
  ploss_only,      // coupled, never symmetric-aware
};

inline std::string to_string(PoseLossKind k) {
  switch (k) {
    case PoseLossKind::disentangled: return "disentangled";
    case PoseLossKind::point_matching: return "point_matching";
    case PoseLossKind::ploss_only: return "ploss_only";
  }
  return "?";
}

inline PoseLossKind parse_pose_loss_kind(const std::string& s) {
  if (s == "disentangled") return PoseLossKind::disentangled;
  if (s == "point_matching" || s == "point-matching") return PoseLossKind::point_matching;
  if (s == "ploss_only" || s == "ploss-only") return PoseLossKind::ploss_only;
  throw ConfigError("unknown pose loss '" + s + "'");
}

enum class PointMatchingMode { full, ploss_only };

struct LossBreakdown {
  double total = 0.0;
  double class_term = 0.0;
  double box_term = 0.0;
  double pose_term = 0.0;  // before the lambda_pose weight
};

/// Gradient of a scalar loss with respect to one prediction tuple.
struct TupleGrad {
  std::vector<double> class_logits;
  std::array<double, 4> bbox{};
  std::array<double, 6> rot6d{};
  Vec3 translation = Vec3::Zero();
};

struct PoseLossGrad {
  double value = 0.0;
  Mat3 d_rotation = Mat3::Zero();  // wrt the predicted rotation matrix
  Vec3 d_translation = Vec3::Zero();
};

namespace detail {

/// For each p in `from`, index of the nearest q in `to` (lowest index on ties) and the distance.
inline void nearest_neighbors(const std::vector<Vec3>& from, const std::vector<Vec3>& to, std::vector<int>& idx,
                              std::vector<double>& dist) {
  idx.assign(from.size(), 0);
  dist.assign(from.size(), 0.0);
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    const Vec3& p = from[i];
    for (std::size_t j = 0; j < to.size(); ++j) {
      const double d2 = (p - to[j]).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_j = static_cast<int>(j);
      }
    }
    idx[i] = best_j;
    dist[i] = std::sqrt(best);
  }
}

/// Mean over x1 of |(R x1 + t) - (R_hat x2 + t_hat)|, x2 = x1 or the closest point when `closest`.
inline PoseLossGrad point_distance_loss(const Mat3& R, const Vec3& t, const Mat3& R_hat, const Vec3& t_hat,
                                        const ModelPoints& points, bool closest, bool want_grad) {
  PoseLossGrad out;
  const auto& xs = points.points();
  const double inv_m = 1.0 / static_cast<double>(xs.size());
  std::vector<Vec3> gt(xs.size()), pr(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    gt[i] = R * xs[i] + t;
    pr[i] = R_hat * xs[i] + t_hat;
  }
  std::vector<int> match;
  std::vector<double> dist;
  if (closest) {
    nearest_neighbors(gt, pr, match, dist);
  } else {
    match.resize(xs.size());
    dist.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      match[i] = static_cast<int>(i);
      dist[i] = (gt[i] - pr[i]).norm();
    }
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.value += dist[i];
    if (!want_grad || dist[i] == 0.0) continue;
    const Vec3 u = (pr[match[i]] - gt[i]) / dist[i];
    out.d_rotation += inv_m * u * xs[match[i]].transpose();
    out.d_translation += inv_m * u;
  }
  out.value *= inv_m;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pose terms

/// Symmetric-aware rotation loss; the branch follows `points.symmetric()`.
inline PoseLossGrad rotation_loss_with_grad(const Rotation& R, const Rotation& R_hat, const ModelPoints& points) {
  PoseLossGrad g =
      detail::point_distance_loss(R.m, Vec3::Zero(), R_hat.m, Vec3::Zero(), points, points.symmetric(), true);
  g.d_translation.setZero();
  return g;
}

inline double rotation_loss(const Rotation& R, const Rotation& R_hat, const ModelPoints& points) {
  return detail::point_distance_loss(R.m, Vec3::Zero(), R_hat.m, Vec3::Zero(), points, points.symmetric(), false)
      .value;
}

/// Rotation loss plus the L2 translation error.
inline PoseLossGrad pose_loss_with_grad(const Rotation& R, const Translation& t, const Rotation& R_hat,
                                        const Translation& t_hat, const ModelPoints& points) {
  PoseLossGrad g = rotation_loss_with_grad(R, R_hat, points);
  const Vec3 diff = t_hat - t;
  const double n = diff.norm();
  g.value += n;
  if (n > 0.0) g.d_translation = diff / n;
  return g;
}

inline double pose_loss(const Rotation& R, const Translation& t, const Rotation& R_hat, const Translation& t_hat,
                        const ModelPoints& points) {
  return rotation_loss(R, R_hat, points) + (t - t_hat).norm();
}

inline PoseLossGrad point_matching_loss_with_grad(const Rotation& R, const Translation& t, const Rotation& R_hat,
                                                  const Translation& t_hat, const ModelPoints& points,
                                                  PointMatchingMode mode) {
  const bool closest = mode == PointMatchingMode::full && points.symmetric();
  return detail::point_distance_loss(R.m, t, R_hat.m, t_hat, points, closest, true);
}

inline double point_matching_loss(const Rotation& R, const Translation& t, const Rotation& R_hat,
                                  const Translation& t_hat, const ModelPoints& points, PointMatchingMode mode) {
  const bool closest = mode == PointMatchingMode::full && points.symmetric();
  return detail::point_distance_loss(R.m, t, R_hat.m, t_hat, points, closest, false).value;
}

// ---------------------------------------------------------------------------
// Set-level terms

namespace detail {

inline void check_assignment(const PredictionSet& preds, const TargetSet& targets, const Assignment& a) {
  if (!a.is_valid(targets.size(), preds.size()))
    throw CardinalityError("assignment does not cover the target set injectively");
}

inline const ModelPoints& lookup_points(std::span<const ModelPoints> table, int class_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= table.size())
    throw ConfigError("no model points for class " + std::to_string(class_id));
  return table[static_cast<std::size_t>(class_id)];
}

}  // namespace detail

/// Mean over all N slots of the weighted NLL; optionally writes d/dlogits per slot.
inline double class_loss(const PredictionSet& preds, const TargetSet& targets, const Assignment& assignment,
                         double eos_weight, std::vector<TupleGrad>* grads = nullptr) {
  detail::check_assignment(preds, targets, assignment);
  const auto slots = preds.size();
  if (slots == 0) return 0.0;
  const auto slot_gt = assignment.slot_to_gt(slots);
  const double inv_n = 1.0 / static_cast<double>(slots);
  double total = 0.0;
  for (std::size_t j = 0; j < slots; ++j) {
    const auto& logits = preds.tuples[j].class_logits;
    const int eos = static_cast<int>(logits.size()) - 1;
    const int target = slot_gt[j] >= 0 ? targets.objects[slot_gt[j]].class_id : eos;
    if (target < 0 || target > eos) throw ConfigError("class id out of range for the logits");
    const double w = slot_gt[j] >= 0 ? 1.0 : eos_weight;
    // log-softmax
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    total += w * (log_z - logits[target]);
    if (grads) {
      auto& g = (*grads)[j].class_logits;
      g.assign(logits.size(), 0.0);
      for (std::size_t c = 0; c < logits.size(); ++c) {
        const double p = std::exp(logits[c] - log_z);
        g[c] = w * inv_n * (p - (static_cast<int>(c) == target ? 1.0 : 0.0));
      }
    }
  }
  return total * inv_n;
}

struct HungarianLossOptions {
  LossWeights weights;
  PoseLossKind pose_kind = PoseLossKind::disentangled;
};

/// Class term over N slots plus box and pose terms averaged over the n matched pairs.
/// When `grads` is non-null it receives d total / d (every predicted quantity) per slot.
inline LossBreakdown hungarian_loss(const PredictionSet& preds, const TargetSet& targets, const Assignment& assignment,
                                    const HungarianLossOptions& opts, std::span<const ModelPoints> points_lookup,
                                    std::vector<TupleGrad>* grads = nullptr) {
  const auto& w = opts.weights;
  if (grads) grads->assign(preds.size(), TupleGrad{});
  LossBreakdown out;
  out.class_term = class_loss(preds, targets, assignment, w.eos_weight, grads);

  const auto n = targets.size();
  if (n > 0) {
    const double inv_n = 1.0 / static_cast<double>(n);
    // Pairs are visited in ground-truth order for a fixed summation order.
    for (auto [gi, pj] : assignment.pairs) {
      const auto& gt = targets.objects[gi];
      const auto& pr = preds.tuples[pj];
      const auto box = box_loss_with_grad(gt.bbox, pr.bbox, w.box_giou_weight, w.box_l1_weight);
      out.box_term += box.value;

      const ModelPoints& pts = detail::lookup_points(points_lookup, gt.class_id);
      const Rotation R_hat = rot6d_to_matrix(pr.rot6d);
      PoseLossGrad pose;
      switch (opts.pose_kind) {
        case PoseLossKind::disentangled:
          pose = pose_loss_with_grad(gt.pose.rotation, gt.pose.translation, R_hat, pr.translation, pts);
          break;
        case PoseLossKind::point_matching:
          pose = point_matching_loss_with_grad(gt.pose.rotation, gt.pose.translation, R_hat, pr.translation, pts,
                                               PointMatchingMode::full);
          break;
        case PoseLossKind::ploss_only:
          pose = point_matching_loss_with_grad(gt.pose.rotation, gt.pose.translation, R_hat, pr.translation, pts,
                                               PointMatchingMode::ploss_only);
          break;
      }
      out.pose_term += pose.value;

      if (grads) {
        auto& g = (*grads)[pj];
        for (int k = 0; k < 4; ++k) g.bbox[k] = inv_n * box.d_pred[k];
        const double scale = w.pose_weight * inv_n;
        const auto d6 = rot6d_backward(pr.rot6d, pose.d_rotation);
        for (int k = 0; k < 6; ++k) g.rot6d[k] = scale * d6[k];
        g.translation = scale * pose.d_translation;
      }
    }
    out.box_term *= inv_n;
    out.pose_term *= inv_n;
  }
  out.total = out.class_term + out.box_term + w.pose_weight * out.pose_term;
  return out;
}

}  // namespace t6d
