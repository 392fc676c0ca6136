#pragma once

// Merged run configuration: model, training, loss, matching, data generation and evaluation.
// Parsed from JSON with unknown keys rejected; the effective config is written next to outputs.

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <string>

#include "t6d/data.hpp"
#include "t6d/json_util.hpp"
#include "t6d/losses.hpp"
#include "t6d/matching.hpp"
#include "t6d/model.hpp"
#include "t6d/train.hpp"

namespace t6d {

/// Name of the environment variable that supplies the default output directory.
inline constexpr const char* kOutputDirEnv = "T6D_OUTPUT_DIR";

inline std::string default_output_dir() {
  const char* v = std::getenv(kOutputDirEnv);
  return (v && *v) ? std::string(v) : std::string("t6d_out");
}

struct DataConfig {
  std::string dir;
  int scenes = 200;
  std::uint64_t seed = 0;
  std::size_t points_per_object = 300;
  SceneConfig scene;
};

struct EvalConfig {
  double score_threshold = 0.0;
  double auc_max_threshold = 0.1;  // meters
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  DataConfig data;
  EvalConfig eval;
  std::string output_dir = default_output_dir();

  void validate() const {
    model.validate();
    train.validate();
    loss.weights.validate();
    loss.matching.validate();
    data.scene.validate();
    if (data.scenes < 0) throw ConfigError("data.scenes must be >= 0");
    if (data.points_per_object < 1) throw ConfigError("data.points_per_object must be positive");
    if (!(eval.auc_max_threshold > 0)) throw ConfigError("eval.auc_max_threshold must be positive");
    if (!(eval.score_threshold >= 0.0 && eval.score_threshold <= 1.0))
      throw ConfigError("eval.score_threshold must lie in [0, 1]");
  }
};

inline nlohmann::json to_json(const SceneConfig& s) {
  return {{"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"focal", s.focal},
          {"z_min", s.z_min},
          {"z_max", s.z_max},
          {"margin_px", s.margin_px},
          {"min_center_distance_px", s.min_center_distance_px},
          {"splat_radius", s.splat_radius},
          {"background", s.background},
          {"max_attempts", s.max_attempts}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["loss"] = {{"box_giou_weight", c.loss.weights.box_giou_weight},
               {"box_l1_weight", c.loss.weights.box_l1_weight},
               {"pose_weight", c.loss.weights.pose_weight},
               {"eos_weight", c.loss.weights.eos_weight},
               {"pose_kind", to_string(c.loss.pose_kind)},
               {"aux_loss", c.loss.aux_loss}};
  j["matching"] = {{"variant", to_string(c.loss.matching.variant)},
                   {"box_l1_weight", c.loss.matching.box_l1_weight},
                   {"box_giou_weight", c.loss.matching.box_giou_weight}};
  j["data"] = {{"dir", c.data.dir},
               {"scenes", c.data.scenes},
               {"seed", c.data.seed},
               {"points_per_object", c.data.points_per_object},
               {"scene", to_json(c.data.scene)}};
  j["eval"] = {{"score_threshold", c.eval.score_threshold}, {"auc_max_threshold", c.eval.auc_max_threshold}};
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

inline void read_scene(const nlohmann::json& j, SceneConfig& s, const std::string& where) {
  StrictObjectReader r(j, where);
  r.get("min_objects", s.min_objects)
      .get("max_objects", s.max_objects)
      .get("image_width", s.image_width)
      .get("image_height", s.image_height)
      .get("focal", s.focal)
      .get("z_min", s.z_min)
      .get("z_max", s.z_max)
      .get("margin_px", s.margin_px)
      .get("min_center_distance_px", s.min_center_distance_px)
      .get("splat_radius", s.splat_radius)
      .get("background", s.background)
      .get("max_attempts", s.max_attempts);
  r.finish();
}

}  // namespace detail

/// Applies a (possibly partial) JSON document on top of `base`.
inline RunConfig merge_run_config(RunConfig base, const nlohmann::json& j, const std::string& where = "config") {
  StrictObjectReader top(j, where);
  if (const auto* m = top.child("model")) {
    // merge model keys over the current model config
    nlohmann::json merged = to_json(base.model);
    if (!m->is_object()) throw ConfigError(where + ".model: expected a JSON object");
    for (auto it = m->begin(); it != m->end(); ++it) {
      if (!merged.contains(it.key())) throw ConfigError(where + ".model: unknown key '" + it.key() + "'");
      merged[it.key()] = it.value();
    }
    base.model = model_config_from_json(merged, where + ".model");
  }
  if (const auto* t = top.child("train")) {
    nlohmann::json merged = to_json(base.train);
    if (!t->is_object()) throw ConfigError(where + ".train: expected a JSON object");
    for (auto it = t->begin(); it != t->end(); ++it) {
      if (!merged.contains(it.key())) throw ConfigError(where + ".train: unknown key '" + it.key() + "'");
      merged[it.key()] = it.value();
    }
    base.train = train_config_from_json(merged, where + ".train");
  }
  if (const auto* l = top.child("loss")) {
    StrictObjectReader r(*l, where + ".loss");
    std::string kind = to_string(base.loss.pose_kind);
    r.get("box_giou_weight", base.loss.weights.box_giou_weight)
        .get("box_l1_weight", base.loss.weights.box_l1_weight)
        .get("pose_weight", base.loss.weights.pose_weight)
        .get("eos_weight", base.loss.weights.eos_weight)
        .get("pose_kind", kind)
        .get("aux_loss", base.loss.aux_loss);
    r.finish();
    base.loss.pose_kind = parse_pose_loss_kind(kind);
  }
  if (const auto* m = top.child("matching")) {
    StrictObjectReader r(*m, where + ".matching");
    std::string variant = to_string(base.loss.matching.variant);
    r.get("variant", variant)
        .get("box_l1_weight", base.loss.matching.box_l1_weight)
        .get("box_giou_weight", base.loss.matching.box_giou_weight);
    r.finish();
    base.loss.matching.variant = parse_match_variant(variant);
  }
  if (const auto* d = top.child("data")) {
    StrictObjectReader r(*d, where + ".data");
    r.get("dir", base.data.dir)
        .get("scenes", base.data.scenes)
        .get("seed", base.data.seed)
        .get("points_per_object", base.data.points_per_object);
    if (const auto* s = r.child("scene")) detail::read_scene(*s, base.data.scene, where + ".data.scene");
    r.finish();
  }
  if (const auto* e = top.child("eval")) {
    StrictObjectReader r(*e, where + ".eval");
    r.get("score_threshold", base.eval.score_threshold).get("auc_max_threshold", base.eval.auc_max_threshold);
    r.finish();
  }
  top.get("output_dir", base.output_dir);
  top.finish();
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, "<document>", e.what());
  }
  return merge_run_config(std::move(base), j, path);
}

inline void write_effective_config(const std::string& dir, const RunConfig& c) {
  std::filesystem::create_directories(dir);
  const auto path = (std::filesystem::path(dir) / "effective_config.json").string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(c).dump(2) << '\n';
}

}  // namespace t6d
