#pragma once

// ADD / ADD-S distances, accuracy-threshold curves with exact AUC, 0.1d accuracy, and
// per-class aggregation.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "t6d/geometry.hpp"
#include "t6d/matching.hpp"

namespace t6d {

inline constexpr double kDefaultAucThreshold = 0.1;  // meters

/// Mean distance between corresponding model points under the two poses.
inline double add_distance(const Pose& gt, const Pose& pred, const ModelPoints& points) {
  double sum = 0.0;
  for (const auto& x : points.points()) sum += (gt.apply(x) - pred.apply(x)).norm();
  return sum / static_cast<double>(points.size());
}

/// Mean closest-point distance (symmetric variant).
inline double adds_distance(const Pose& gt, const Pose& pred, const ModelPoints& points) {
  const auto a = transform_points(points, gt);
  const auto b = transform_points(points, pred);
  double sum = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, (p - q).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(a.size());
}

struct MetricCurve {
  std::vector<double> thresholds;  // ascending, meters
  std::vector<double> accuracies;  // fraction of distances strictly below each threshold
  double auc = 0.0;

  void write_csv(std::ostream& os) const {
    os << "threshold,accuracy\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < thresholds.size(); ++i) os << thresholds[i] << ',' << accuracies[i] << '\n';
  }
};

/// Exact integral of the accuracy step function over (0, max_threshold], normalized to [0, 1].
/// Infinite distances (missed detections) count as failures at every threshold.
inline MetricCurve accuracy_auc(std::span<const double> distances, double max_threshold = kDefaultAucThreshold) {
  if (distances.empty()) throw EmptyInput("accuracy_auc needs at least one distance");
  if (!(max_threshold > 0.0)) throw ConfigError("AUC threshold must be positive");
  std::vector<double> d(distances.begin(), distances.end());
  for (double v : d)
    if (std::isnan(v) || v < 0.0) throw DegenerateInput("distances must be non-negative");
  std::sort(d.begin(), d.end());
  const double n = static_cast<double>(d.size());

  MetricCurve c;
  double area = 0.0;
  for (double v : d)
    if (v < max_threshold) area += max_threshold - v;
  c.auc = area / (n * max_threshold);

  auto accuracy_at = [&](double tau) {
    return static_cast<double>(std::lower_bound(d.begin(), d.end(), tau) - d.begin()) / n;
  };
  c.thresholds.push_back(0.0);
  for (double v : d) {
    if (v > 0.0 && v < max_threshold && v != c.thresholds.back()) c.thresholds.push_back(v);
  }
  c.thresholds.push_back(max_threshold);
  for (double tau : c.thresholds) c.accuracies.push_back(accuracy_at(tau));
  return c;
}

struct EvalRecord {
  int image_id = 0;
  int class_id = 0;
  double distance_add = 0.0;   // meters, +inf when the object was missed
  double distance_adds = 0.0;  // meters, +inf when the object was missed
  double diameter = 0.0;
  bool symmetric = false;

  /// ADD-S for symmetric classes, ADD otherwise.
  double sym_aware_distance() const { return symmetric ? distance_adds : distance_add; }
};

/// Fraction of records whose ADD(-S) (or plain ADD) is below 10% of the object diameter.
inline double add_01d_accuracy(std::span<const EvalRecord> records, bool use_adds_for_symmetric = true) {
  if (records.empty()) throw EmptyInput("add_01d_accuracy needs at least one record");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (!(r.diameter > 0.0)) throw DegenerateInput("record diameter must be positive");
    const double d = use_adds_for_symmetric ? r.sym_aware_distance() : r.distance_add;
    if (d < 0.1 * r.diameter) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

struct ClassInfo {
  std::string name;
  bool symmetric = false;
};

struct MetricRow {
  std::string label;
  double auc_add_s = 0.0;
  double auc_add_sym_aware = 0.0;
  double add01d = 0.0;
  std::size_t n_records = 0;
};

struct MetricTable {
  std::vector<MetricRow> per_class;
  MetricRow mean;

  void write_csv(std::ostream& os) const {
    os << "class,auc_add_s,auc_add_sym_aware,add01d,n_records\n";
    os << std::setprecision(17);
    auto row = [&](const MetricRow& r) {
      os << r.label << ',' << r.auc_add_s << ',' << r.auc_add_sym_aware << ',' << r.add01d << ',' << r.n_records
         << '\n';
    };
    for (const auto& r : per_class) row(r);
    row(mean);
  }
};

/// Per-class and uniformly averaged AUC of ADD-S, AUC of ADD(-S) and ADD(-S) 0.1d.
/// Symmetry comes from `class_table`; classes without records are omitted.
inline MetricTable aggregate(std::span<const EvalRecord> records, std::span<const ClassInfo> class_table,
                             double max_threshold = kDefaultAucThreshold) {
  if (records.empty()) throw EmptyInput("aggregate needs at least one record");
  std::map<int, std::vector<EvalRecord>> by_class;
  for (auto r : records) {
    if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= class_table.size())
      throw ConfigError("record class " + std::to_string(r.class_id) + " missing from the class table");
    r.symmetric = class_table[r.class_id].symmetric;
    by_class[r.class_id].push_back(r);
  }
  MetricTable t;
  t.mean.label = "mean";
  for (auto& [cls, recs] : by_class) {
    std::vector<double> adds, sym;
    for (const auto& r : recs) {
      adds.push_back(r.distance_adds);
      sym.push_back(r.sym_aware_distance());
    }
    MetricRow row;
    row.label = class_table[cls].name.empty() ? std::to_string(cls) : class_table[cls].name;
    row.auc_add_s = accuracy_auc(adds, max_threshold).auc;
    row.auc_add_sym_aware = accuracy_auc(sym, max_threshold).auc;
    row.add01d = add_01d_accuracy(recs, true);
    row.n_records = recs.size();
    t.per_class.push_back(row);
  }
  const double k = static_cast<double>(t.per_class.size());
  for (const auto& r : t.per_class) {
    t.mean.auc_add_s += r.auc_add_s / k;
    t.mean.auc_add_sym_aware += r.auc_add_sym_aware / k;
    t.mean.add01d += r.add01d / k;
    t.mean.n_records += r.n_records;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation-time pairing

/// A slot counts as a detection of the real class with the highest probability (no-object
/// excluded) when that probability reaches `score_threshold`. Each ground-truth object takes
/// the most confident unused detection of its class, greedily in decreasing confidence.
/// Returns the slot index per ground-truth object, or -1 when none is available.
inline std::vector<int> pair_for_evaluation(const PredictionSet& preds, const TargetSet& targets,
                                            double score_threshold = 0.0) {
  struct Candidate {
    double score;
    int gt;
    int slot;
  };
  std::vector<int> label(preds.size(), -1);
  std::vector<double> score(preds.size(), 0.0);
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const auto p = softmax(preds.tuples[j].class_logits);
    const int real = static_cast<int>(p.size()) - 1;
    int best = -1;
    for (int c = 0; c < real; ++c)
      if (best < 0 || p[c] > p[best]) best = c;
    if (best >= 0 && p[best] >= score_threshold) {
      label[j] = best;
      score[j] = p[best];
    }
  }
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = 0; j < preds.size(); ++j)
      if (label[j] == targets.objects[i].class_id)
        cands.push_back({score[j], static_cast<int>(i), static_cast<int>(j)});
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.slot < b.slot;
  });
  std::vector<int> out(targets.size(), -1);
  std::vector<bool> used(preds.size(), false);
  for (const auto& c : cands) {
    if (out[c.gt] >= 0 || used[c.slot]) continue;
    out[c.gt] = c.slot;
    used[c.slot] = true;
  }
  return out;
}

/// One EvalRecord per ground-truth object; missed objects get infinite distances.
inline std::vector<EvalRecord> evaluate_scene(int image_id, const PredictionSet& preds, const TargetSet& targets,
                                              std::span<const ModelPoints> points_lookup,
                                              double score_threshold = 0.0) {
  const auto pairing = pair_for_evaluation(preds, targets, score_threshold);
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& gt = targets.objects[i];
    if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= points_lookup.size())
      throw ConfigError("no model points for class " + std::to_string(gt.class_id));
    const ModelPoints& pts = points_lookup[gt.class_id];
    EvalRecord r;
    r.image_id = image_id;
    r.class_id = gt.class_id;
    r.diameter = pts.diameter();
    r.symmetric = pts.symmetric();
    if (pairing[i] < 0) {
      r.distance_add = r.distance_adds = std::numeric_limits<double>::infinity();
    } else {
      const auto& tup = preds.tuples[pairing[i]];
      Pose pred{tup.rotation(), tup.translation};
      r.distance_add = add_distance(gt.pose, pred, pts);
      r.distance_adds = adds_distance(gt.pose, pred, pts);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace t6d
