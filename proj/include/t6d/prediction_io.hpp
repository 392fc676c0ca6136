#pragma once

// JSON files holding per-image prediction sets:
// {version, n_classes, scenes: [{image_id, predictions: [{class_logits, bbox, rot6d, t}]}]}

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "t6d/data.hpp"
#include "t6d/matching.hpp"

namespace t6d {

inline constexpr int kPredictionsFormatVersion = 1;

struct ScenePredictions {
  int image_id = 0;
  PredictionSet predictions;
};

inline nlohmann::json predictions_to_json(const std::vector<ScenePredictions>& scenes, int n_classes) {
  nlohmann::json j;
  j["version"] = kPredictionsFormatVersion;
  j["n_classes"] = n_classes;
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : scenes) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : s.predictions.tuples)
      preds.push_back({{"class_logits", p.class_logits},
                       {"bbox", p.bbox.to_array()},
                       {"rot6d", p.rot6d.to_array()},
                       {"t", {p.translation.x(), p.translation.y(), p.translation.z()}}});
    j["scenes"].push_back({{"image_id", s.image_id}, {"predictions", std::move(preds)}});
  }
  return j;
}

inline std::vector<ScenePredictions> predictions_from_json(const nlohmann::json& j, const std::string& where,
                                                           int* n_classes_out = nullptr) {
  if (detail::require_as<int>(j, "version", where) != kPredictionsFormatVersion)
    throw ParseError(where, "version", "unsupported predictions version");
  const int n_classes = detail::require_as<int>(j, "n_classes", where);
  if (n_classes < 1) throw ParseError(where, "n_classes", "must be positive");
  if (n_classes_out) *n_classes_out = n_classes;
  std::vector<ScenePredictions> out;
  const auto& scenes = detail::require(j, "scenes", where);
  if (!scenes.is_array()) throw ParseError(where, "scenes", "expected an array");
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const std::string sw = where + ":scenes[" + std::to_string(si) + "]";
    ScenePredictions s;
    s.image_id = detail::require_as<int>(scenes[si], "image_id", sw);
    const auto& preds = detail::require(scenes[si], "predictions", sw);
    if (!preds.is_array()) throw ParseError(sw, "predictions", "expected an array");
    for (std::size_t pi = 0; pi < preds.size(); ++pi) {
      const std::string pw = sw + ":predictions[" + std::to_string(pi) + "]";
      PredictionTuple t;
      t.class_logits = detail::require_reals(preds[pi], "class_logits", static_cast<std::size_t>(n_classes) + 1, pw);
      const auto b = detail::require_reals(preds[pi], "bbox", 4, pw);
      t.bbox = {b[0], b[1], b[2], b[3]};
      const auto r = detail::require_reals(preds[pi], "rot6d", 6, pw);
      t.rot6d = Rot6D::from_array(r);
      const auto tv = detail::require_reals(preds[pi], "t", 3, pw);
      t.translation = Vec3(tv[0], tv[1], tv[2]);
      s.predictions.tuples.push_back(std::move(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_predictions(const std::string& path, const std::vector<ScenePredictions>& scenes, int n_classes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << predictions_to_json(scenes, n_classes).dump(1) << '\n';
}

inline std::vector<ScenePredictions> load_predictions(const std::string& path, int* n_classes_out = nullptr) {
  return predictions_from_json(detail::read_json_file(path), path, n_classes_out);
}

}  // namespace t6d
