#pragma once

// Training: per-sample matching + Hungarian loss + backward, AdamW with gradient clipping and
// a step learning-rate schedule, loss logs, checkpoints, and model evaluation.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "t6d/autograd.hpp"
#include "t6d/data.hpp"
#include "t6d/json_util.hpp"
#include "t6d/losses.hpp"
#include "t6d/matching.hpp"
#include "t6d/metrics.hpp"
#include "t6d/model.hpp"

namespace t6d {

struct TrainConfig {
  double lr = 1e-4;
  double lr_after_decay = 1e-5;
  int decay_at_iteration = 6000;
  int total_iterations = 8000;
  int batch_size = 4;
  double grad_clip_norm = 0.1;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool freeze_transformer = false;  // multi-stage variant: only the prediction heads train
  int num_threads = 1;

  double lr_at(int iteration) const { return iteration < decay_at_iteration ? lr : lr_after_decay; }

  void validate() const {
    if (!(lr > 0) || !(lr_after_decay > 0)) throw ConfigError("learning rates must be positive");
    if (decay_at_iteration < 0 || total_iterations < 0) throw ConfigError("iteration counts must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (num_threads < 1) throw ConfigError("num_threads must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"lr_after_decay", c.lr_after_decay},
          {"decay_at_iteration", c.decay_at_iteration},
          {"total_iterations", c.total_iterations},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"freeze_transformer", c.freeze_transformer},
          {"num_threads", c.num_threads}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train") {
  TrainConfig c;
  StrictObjectReader r(j, where);
  r.get("lr", c.lr)
      .get("lr_after_decay", c.lr_after_decay)
      .get("decay_at_iteration", c.decay_at_iteration)
      .get("total_iterations", c.total_iterations)
      .get("batch_size", c.batch_size)
      .get("grad_clip_norm", c.grad_clip_norm)
      .get("weight_decay", c.weight_decay)
      .get("adam_beta1", c.adam_beta1)
      .get("adam_beta2", c.adam_beta2)
      .get("adam_eps", c.adam_eps)
      .get("seed", c.seed)
      .get("freeze_transformer", c.freeze_transformer)
      .get("num_threads", c.num_threads);
  r.finish();
  return c;
}

/// Everything that defines the training objective.
struct LossConfig {
  LossWeights weights;
  PoseLossKind pose_kind = PoseLossKind::disentangled;
  MatchCostConfig matching;
  bool aux_loss = false;  // Hungarian loss on every intermediate decoder layer too

  HungarianLossOptions hungarian() const { return {weights, pose_kind}; }
};

// ---------------------------------------------------------------------------
// Optimizer

/// Global L2-norm clipping; returns the norm before clipping.
inline double clip_grad_norm(ag::ParameterStore& params, double max_norm) {
  const double norm = params.grad_norm();
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (auto& p : params)
      for (double& g : p.grad.data) g *= s;
  }
  return norm;
}

/// AdamW with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ag::ParameterStore& params, double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  /// Updates parameters whose `mask` entry is true (all when the mask is empty).
  void step(ag::ParameterStore& params, double lr, const std::vector<bool>& mask = {}) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      auto& p = params[static_cast<int>(i)];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad.data[k];
        p.value.data[k] *= 1.0 - lr * weight_decay_;
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
        p.value.data[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      }
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Per-sample objective

struct SampleResult {
  LossBreakdown loss;
  std::vector<ag::Tensor> grads;  // one per parameter, in store order (empty if not requested)
  Assignment assignment;          // final decoder layer
};

namespace detail {

inline TargetSet targets_in_model_frame(const TargetSet& targets, bool allocentric) {
  if (!allocentric) return targets;
  TargetSet t = targets;
  for (auto& o : t.objects) o.pose = egocentric_to_allocentric(o.pose);
  return t;
}

inline std::vector<std::pair<ag::Var, ag::Tensor>> seeds_from(const HeadOutputs& h, const std::vector<TupleGrad>& grads,
                                                              const ag::Graph& g) {
  const int n = static_cast<int>(grads.size());
  ag::Tensor dl(n, g.value(h.logits).cols), db(n, 4), dr(n, 6), dt(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < dl.cols; ++c) dl(i, c) = grads[i].class_logits.empty() ? 0.0 : grads[i].class_logits[c];
    for (int k = 0; k < 4; ++k) db(i, k) = grads[i].bbox[k];
    for (int k = 0; k < 6; ++k) dr(i, k) = grads[i].rot6d[k];
    for (int k = 0; k < 3; ++k) dt(i, k) = grads[i].translation[k];
  }
  return {{h.logits, dl}, {h.bbox, db}, {h.rot6d, dr}, {h.translation, dt}};
}

}  // namespace detail

/// Trainable mask for the store: everything, or heads only when frozen.
inline std::vector<bool> trainable_mask(const PoseTransformer& net, bool freeze_transformer) {
  std::vector<bool> mask;
  for (const auto& p : net.params()) mask.push_back(!freeze_transformer || PoseTransformer::is_head_parameter(p.name));
  return mask;
}

/// Forward, match, Hungarian loss and (optionally) backward for one image.
inline SampleResult sample_loss(const PoseTransformer& net, const Sample& sample, const LossConfig& cfg,
                                std::span<const ModelPoints> points, bool want_grads,
                                const std::vector<bool>& mask = {}) {
  ag::Graph g;
  g.set_trainable_mask(mask);
  const auto fwd = net.forward(g, sample.image, cfg.aux_loss);
  const TargetSet targets = detail::targets_in_model_frame(sample.targets, net.config().allocentric);

  SampleResult out;
  std::vector<std::pair<ag::Var, ag::Tensor>> seeds;
  auto run_head = [&](const HeadOutputs& h, bool is_final) {
    const PredictionSet preds = PoseTransformer::to_prediction_set(g, h);
    const Assignment a = hungarian_assign(build_cost_matrix(targets, preds, cfg.matching));
    std::vector<TupleGrad> grads;
    const LossBreakdown b = hungarian_loss(preds, targets, a, cfg.hungarian(), points, want_grads ? &grads : nullptr);
    out.loss.total += b.total;
    out.loss.class_term += b.class_term;
    out.loss.box_term += b.box_term;
    out.loss.pose_term += b.pose_term;
    if (is_final) out.assignment = a;
    if (want_grads) {
      auto s = detail::seeds_from(h, grads, g);
      seeds.insert(seeds.end(), s.begin(), s.end());
    }
  };
  for (const auto& h : fwd.aux_outputs) run_head(h, false);
  run_head(fwd.final_outputs, true);

  if (want_grads) {
    g.backward(seeds);
    for (std::size_t i = 0; i < net.params().size(); ++i)
      out.grads.push_back(g.param_grad(net.params(), static_cast<int>(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossLogRow {
  int iteration = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

inline const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> groups{"backbone", "input_proj", "encoder", "decoder", "query_embed", "heads"};
  return groups;
}

inline std::size_t parameter_group(const std::string& name) {
  const auto& groups = parameter_groups();
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (name.rfind(groups[i], 0) == 0) return i;
  return groups.size() - 1;
}

struct GradNormRow {
  int iteration = 0;
  std::vector<double> group_norms;  // aligned with parameter_groups()
};

struct TrainResult {
  std::vector<LossLogRow> loss_log;
  std::vector<GradNormRow> grad_log;
};

inline void write_loss_log(std::ostream& os, const std::vector<LossLogRow>& rows) {
  os << "iteration,total,class,box,pose,lr\n" << std::setprecision(17);
  for (const auto& r : rows)
    os << r.iteration << ',' << r.loss.total << ',' << r.loss.class_term << ',' << r.loss.box_term << ','
       << r.loss.pose_term << ',' << r.lr << '\n';
}

inline void write_grad_log(std::ostream& os, const std::vector<GradNormRow>& rows) {
  os << "iteration";
  for (const auto& g : parameter_groups()) os << ',' << g;
  os << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.iteration;
    for (double v : r.group_norms) os << ',' << v;
    os << '\n';
  }
}

using TrainCallback = std::function<void(const LossLogRow&)>;

/// Mini-batch AdamW training over shuffled epochs. Per-sample gradients are reduced in batch
/// order, so results do not depend on `num_threads`.
inline TrainResult train(PoseTransformer& net, const Dataset& data, const TrainConfig& tc, const LossConfig& lc,
                         const TrainCallback& on_iteration = {}) {
  tc.validate();
  lc.weights.validate();
  lc.matching.validate();
  if (data.samples.empty()) throw EmptyInput("training dataset is empty");
  if (data.catalog.num_classes() != net.config().n_classes)
    throw ConfigError("dataset has " + std::to_string(data.catalog.num_classes()) + " classes, model expects " +
                      std::to_string(net.config().n_classes));
  const auto points = data.catalog.points_table();
  const auto mask = trainable_mask(net, tc.freeze_transformer);
  auto& params = net.params();
  AdamW opt(params, tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay);
  std::mt19937_64 rng(tc.seed);

  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainResult result;
  for (int it = 0; it < tc.total_iterations; ++it) {
    std::vector<std::size_t> batch;
    for (int b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    std::vector<SampleResult> per_sample(batch.size());
    auto work = [&](std::size_t b) { per_sample[b] = sample_loss(net, data.samples[batch[b]], lc, points, true, mask); };
    if (tc.num_threads == 1) {
      for (std::size_t b = 0; b < batch.size(); ++b) work(b);
    } else {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (int t = 0; t < tc.num_threads; ++t)
        pool.emplace_back([&] {
          for (std::size_t b = next++; b < batch.size(); b = next++) work(b);
        });
      for (auto& th : pool) th.join();
    }

    params.zero_grad();
    LossLogRow row;
    row.iteration = it;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : per_sample) {
      row.loss.total += s.loss.total * inv_b;
      row.loss.class_term += s.loss.class_term * inv_b;
      row.loss.box_term += s.loss.box_term * inv_b;
      row.loss.pose_term += s.loss.pose_term * inv_b;
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& dst = params[static_cast<int>(i)].grad.data;
        const auto& src = s.grads[i].data;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    GradNormRow gn;
    gn.iteration = it;
    gn.group_norms.assign(parameter_groups().size(), 0.0);
    for (auto& p : params) {
      for (double& g : p.grad.data) g *= inv_b;
      double s = 0.0;
      for (double g : p.grad.data) s += g * g;
      gn.group_norms[parameter_group(p.name)] += s;
    }
    for (double& v : gn.group_norms) v = std::sqrt(v);

    if (!std::isfinite(row.loss.total)) throw NumericalFailure("non-finite loss at iteration " + std::to_string(it));
    row.grad_norm = clip_grad_norm(params, tc.grad_clip_norm);
    if (!std::isfinite(row.grad_norm))
      throw NumericalFailure("non-finite gradient norm at iteration " + std::to_string(it));
    row.lr = tc.lr_at(it);
    opt.step(params, row.lr, mask);
    result.loss_log.push_back(row);
    result.grad_log.push_back(gn);
    if (on_iteration) on_iteration(row);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

inline void save_checkpoint(const std::string& path, const PoseTransformer& net,
                            const nlohmann::json& extra_config = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "t6d-checkpoint";
  j["format_version"] = kCheckpointFormatVersion;
  j["model_config"] = to_json(net.config());
  j["config"] = extra_config;
  j["tensors"] = nlohmann::json::array();
  for (const auto& p : net.params())
    j["tensors"].push_back({{"name", p.name}, {"shape", {p.value.rows, p.value.cols}}, {"data", p.value.data}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline PoseTransformer load_checkpoint(const std::string& path, nlohmann::json* extra_config = nullptr) {
  const auto j = detail::read_json_file(path);
  if (detail::require_as<std::string>(j, "format", path) != "t6d-checkpoint")
    throw ParseError(path, "format", "not a t6d checkpoint");
  if (detail::require_as<int>(j, "format_version", path) != kCheckpointFormatVersion)
    throw ParseError(path, "format_version", "unsupported checkpoint version");
  PoseTransformer net(model_config_from_json(detail::require(j, "model_config", path), path + ":model_config"));
  const auto& tensors = detail::require(j, "tensors", path);
  if (tensors.size() != net.params().size())
    throw ParseError(path, "tensors", "expected " + std::to_string(net.params().size()) + " tensors");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string where = path + ":tensors[" + std::to_string(i) + "]";
    const auto name = detail::require_as<std::string>(tensors[i], "name", where);
    const auto shape = detail::require_as<std::vector<int>>(tensors[i], "shape", where);
    auto& p = net.params()[name];
    if (shape.size() != 2 || shape[0] != p.value.rows || shape[1] != p.value.cols)
      throw ParseError(where, "shape", "shape does not match the model configuration");
    auto data = detail::require_as<std::vector<double>>(tensors[i], "data", where);
    if (data.size() != p.value.size()) throw ParseError(where, "data", "payload size does not match shape");
    p.value.data = std::move(data);
  }
  if (extra_config && j.contains("config")) *extra_config = j["config"];
  return net;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Ground truth expressed as a confident prediction set with `slots` entries.
inline PredictionSet oracle_predictions(const TargetSet& targets, int slots, int num_classes) {
  PredictionSet s;
  for (int j = 0; j < slots; ++j) {
    PredictionTuple t;
    t.class_logits.assign(static_cast<std::size_t>(num_classes) + 1, -20.0);
    if (static_cast<std::size_t>(j) < targets.size()) {
      const auto& o = targets.objects[j];
      t.class_logits[o.class_id] = 20.0;
      t.bbox = o.bbox;
      t.rot6d = matrix_to_rot6d(o.pose.rotation);
      t.translation = o.pose.translation;
    } else {
      t.class_logits[num_classes] = 20.0;
      t.bbox = {0.5, 0.5, 0.1, 0.1};
      t.translation = Vec3(0, 0, 1);
    }
    s.tuples.push_back(std::move(t));
  }
  return s;
}

inline std::vector<EvalRecord> evaluate_predictions(const std::vector<PredictionSet>& predictions, const Dataset& data,
                                                    double score_threshold = 0.0) {
  if (predictions.size() != data.samples.size()) throw ConfigError("one prediction set per sample is required");
  const auto points = data.catalog.points_table();
  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    auto r = evaluate_scene(data.samples[i].image_id, predictions[i], data.samples[i].targets, points, score_threshold);
    records.insert(records.end(), r.begin(), r.end());
  }
  return records;
}

inline std::vector<PredictionSet> predict_dataset(const PoseTransformer& net, const Dataset& data) {
  if (data.catalog.num_classes() != net.config().n_classes)
    throw ConfigError("checkpoint expects " + std::to_string(net.config().n_classes) + " classes, dataset has " +
                      std::to_string(data.catalog.num_classes()));
  std::vector<PredictionSet> out;
  for (const auto& s : data.samples) out.push_back(net.predict(s.image));
  return out;
}

}  // namespace t6d
