// t6d: dataset generation, training, evaluation, matching inspection and metric export.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "t6d/config.hpp"
#include "t6d/data.hpp"
#include "t6d/matching.hpp"
#include "t6d/metrics.hpp"
#include "t6d/model.hpp"
#include "t6d/prediction_io.hpp"
#include "t6d/train.hpp"

namespace fs = std::filesystem;
using namespace t6d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_out = true) {
  cmd->add_option("--config", o.config_path, "JSON run configuration; command-line flags override it")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for every random choice made by this command");
  if (with_out)
    cmd->add_option("--out", o.out_dir,
                    std::string("Output directory (default: $") + kOutputDirEnv + " or ./t6d_out)");
}

RunConfig base_config(const CommonOptions& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_run_config(o.config_path, c);
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  w(out);
  if (!out) throw IoError("failed writing " + path.string());
}

void write_records_csv(std::ostream& os, const std::vector<EvalRecord>& records) {
  os << "image_id,class_id,add,adds,diameter,symmetric\n" << std::setprecision(17);
  for (const auto& r : records)
    os << r.image_id << ',' << r.class_id << ',' << r.distance_add << ',' << r.distance_adds << ',' << r.diameter
       << ',' << (r.symmetric ? 1 : 0) << '\n';
}

std::vector<double> distances(const std::vector<EvalRecord>& records, bool sym_aware) {
  std::vector<double> d;
  for (const auto& r : records) d.push_back(sym_aware ? r.sym_aware_distance() : r.distance_adds);
  return d;
}

/// Metrics CSV plus the two accuracy-threshold curves.
MetricTable write_metric_outputs(const fs::path& dir, const std::vector<EvalRecord>& records,
                                 const std::vector<ClassInfo>& classes, double max_threshold) {
  const auto table = aggregate(records, classes, max_threshold);
  write_file(dir / "metrics.csv", [&](std::ostream& os) { table.write_csv(os); });
  const auto adds = accuracy_auc(distances(records, false), max_threshold);
  const auto sym = accuracy_auc(distances(records, true), max_threshold);
  write_file(dir / "curve_add_s.csv", [&](std::ostream& os) { adds.write_csv(os); });
  write_file(dir / "curve_add_sym_aware.csv", [&](std::ostream& os) { sym.write_csv(os); });
  write_file(dir / "records.csv", [&](std::ostream& os) { write_records_csv(os, records); });
  return table;
}

void print_table(const MetricTable& t) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& r : t.per_class)
    std::cout << "  " << std::left << std::setw(12) << r.label << " AUC ADD-S " << r.auc_add_s << "  AUC ADD(-S) "
              << r.auc_add_sym_aware << "  ADD(-S) 0.1d " << r.add01d << "  n=" << r.n_records << '\n';
  std::cout << "  " << std::left << std::setw(12) << "mean" << " AUC ADD-S " << t.mean.auc_add_s << "  AUC ADD(-S) "
            << t.mean.auc_add_sym_aware << "  ADD(-S) 0.1d " << t.mean.add01d << "  n=" << t.mean.n_records << '\n';
  std::cout.unsetf(std::ios::floatfield);
}

/// Image size and class count always follow the dataset.
void fit_model_to_dataset(ModelConfig& m, const Dataset& data, const DatasetAnnotations& ann) {
  m.n_classes = data.catalog.num_classes();
  m.image_width = ann.image_width;
  m.image_height = ann.image_height;
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
  CommonOptions common;
  std::optional<int> scenes;
  std::optional<int> min_objects, max_objects;
  std::optional<std::size_t> points;
  std::vector<std::string> meshes;
  std::string mesh_units = "m";
  std::vector<int> symmetric_classes;
};

int cmd_gen_data(const GenDataOptions& o) {
  RunConfig c = base_config(o.common);
  if (o.common.seed) c.data.seed = *o.common.seed;
  if (o.scenes) c.data.scenes = *o.scenes;
  if (o.min_objects) c.data.scene.min_objects = *o.min_objects;
  if (o.max_objects) c.data.scene.max_objects = *o.max_objects;
  if (o.points) c.data.points_per_object = *o.points;
  c.data.dir = c.output_dir;
  c.validate();

  const ObjectCatalog catalog =
      o.meshes.empty()
          ? builtin_catalog(c.data.points_per_object, c.data.seed)
          : catalog_from_meshes(o.meshes, parse_mesh_units(o.mesh_units), c.data.points_per_object, c.data.seed,
                                o.symmetric_classes);
  DatasetAnnotations ann;
  const Dataset data = generate_dataset(catalog, c.data.seed, c.data.scenes, c.data.scene, &ann);
  write_dataset(c.output_dir, data, ann);
  write_effective_config(c.output_dir, c);

  std::size_t objects = 0;
  for (const auto& s : data.samples) objects += s.targets.size();
  std::cout << "wrote " << data.samples.size() << " images, " << objects << " objects, " << catalog.num_classes()
            << " classes to " << c.output_dir << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  std::string data_dir;
  std::optional<int> iterations, batch_size, decay_at, threads;
  std::optional<double> lr, lr_after_decay, clip;
  bool freeze_transformer = false;
  bool aux_loss = false;
  bool allocentric = false;
  std::string init_checkpoint;
  std::string pose_loss;
  std::string match_variant;
};

int cmd_train(const TrainOptions& o) {
  RunConfig c = base_config(o.common);
  if (o.common.seed) {
    c.train.seed = *o.common.seed;
    c.model.seed = *o.common.seed;
  }
  if (o.iterations) c.train.total_iterations = *o.iterations;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.decay_at) c.train.decay_at_iteration = *o.decay_at;
  if (o.threads) c.train.num_threads = *o.threads;
  if (o.lr) c.train.lr = *o.lr;
  if (o.lr_after_decay) c.train.lr_after_decay = *o.lr_after_decay;
  if (o.clip) c.train.grad_clip_norm = *o.clip;
  if (o.freeze_transformer) c.train.freeze_transformer = true;
  if (o.aux_loss) c.loss.aux_loss = true;
  if (o.allocentric) c.model.allocentric = true;
  if (!o.pose_loss.empty()) c.loss.pose_kind = parse_pose_loss_kind(o.pose_loss);
  if (!o.match_variant.empty()) c.loss.matching.variant = parse_match_variant(o.match_variant);
  if (!o.data_dir.empty()) c.data.dir = o.data_dir;
  if (c.data.dir.empty()) throw ConfigError("train needs --data (or data.dir in the config file)");

  DatasetAnnotations ann;
  const Dataset data = load_dataset(c.data.dir, &ann);
  if (data.samples.empty()) throw EmptyInput("dataset " + c.data.dir + " has no scenes");

  std::optional<PoseTransformer> net;
  if (!o.init_checkpoint.empty()) {
    net.emplace(load_checkpoint(o.init_checkpoint));
    const bool allocentric = c.model.allocentric;
    c.model = net->config();
    if (o.allocentric && !allocentric) throw ConfigError("--allocentric conflicts with the initial checkpoint");
    if (c.model.n_classes != data.catalog.num_classes() || c.model.image_width != ann.image_width ||
        c.model.image_height != ann.image_height)
      throw ConfigError("initial checkpoint does not match the dataset's classes or image size");
  } else {
    fit_model_to_dataset(c.model, data, ann);
  }
  c.validate();
  if (!net) net.emplace(c.model);

  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_effective_config(out.string(), c);

  const int report_every = std::max(1, c.train.total_iterations / 20);
  const auto result = train(*net, data, c.train, c.loss, [&](const LossLogRow& r) {
    if (r.iteration % report_every == 0 || r.iteration + 1 == c.train.total_iterations)
      std::cout << "iter " << r.iteration << "  loss " << r.loss.total << "  (class " << r.loss.class_term << ", box "
                << r.loss.box_term << ", pose " << r.loss.pose_term << ")  lr " << r.lr << '\n';
  });

  save_checkpoint((out / "checkpoint.json").string(), *net, to_json(c));
  write_file(out / "loss_log.csv", [&](std::ostream& os) { write_loss_log(os, result.loss_log); });
  write_file(out / "grad_norms.csv", [&](std::ostream& os) { write_grad_log(os, result.grad_log); });
  std::cout << "checkpoint written to " << (out / "checkpoint.json").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  CommonOptions common;
  std::string data_dir;
  std::string checkpoint;
  bool oracle = false;
  std::optional<double> score_threshold;
  std::optional<int> attention_image;
};

int cmd_eval(const EvalOptions& o) {
  RunConfig c = base_config(o.common);
  if (o.score_threshold) c.eval.score_threshold = *o.score_threshold;
  if (!o.data_dir.empty()) c.data.dir = o.data_dir;
  if (c.data.dir.empty()) throw ConfigError("eval needs --data (or data.dir in the config file)");
  if (o.oracle == !o.checkpoint.empty()) throw ConfigError("eval needs exactly one of --checkpoint and --oracle");

  DatasetAnnotations ann;
  const Dataset data = load_dataset(c.data.dir, &ann);

  std::optional<PoseTransformer> net;
  if (!o.oracle) {
    net.emplace(load_checkpoint(o.checkpoint));
    c.model = net->config();
    if (c.model.n_classes != data.catalog.num_classes())
      throw ConfigError("checkpoint expects " + std::to_string(c.model.n_classes) + " classes, dataset has " +
                        std::to_string(data.catalog.num_classes()));
    if (c.model.image_width != ann.image_width || c.model.image_height != ann.image_height)
      throw ConfigError("checkpoint image size does not match the dataset");
  } else {
    fit_model_to_dataset(c.model, data, ann);
  }
  c.validate();

  std::vector<PredictionSet> preds;
  if (net) {
    preds = predict_dataset(*net, data);
  } else {
    for (const auto& s : data.samples)
      preds.push_back(oracle_predictions(s.targets, c.model.n_queries, data.catalog.num_classes()));
  }
  const auto records = evaluate_predictions(preds, data, c.eval.score_threshold);

  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_effective_config(out.string(), c);
  std::vector<ScenePredictions> scene_preds;
  for (std::size_t i = 0; i < preds.size(); ++i) scene_preds.push_back({data.samples[i].image_id, preds[i]});
  save_predictions((out / "predictions.json").string(), scene_preds, data.catalog.num_classes());
  const auto table = write_metric_outputs(out, records, data.catalog.class_table(), c.eval.auc_max_threshold);

  if (o.attention_image) {
    if (!net) throw ConfigError("--attention-image needs --checkpoint");
    const auto it = std::find_if(data.samples.begin(), data.samples.end(),
                                 [&](const Sample& s) { return s.image_id == *o.attention_image; });
    if (it == data.samples.end()) throw EmptyInput("no image with id " + std::to_string(*o.attention_image));
    write_text(out / "attention.json", export_attention(*net, it->image).dump() + "\n");
  }

  std::cout << "evaluated " << data.samples.size() << " images, " << records.size() << " objects\n";
  print_table(table);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct MatchDebugOptions {
  std::string annotations;
  std::string predictions;
  std::optional<int> image_id;
  std::string variant = "object_only";
  std::optional<double> l1_weight, giou_weight;
  bool json = false;
};

int cmd_match_debug(const MatchDebugOptions& o) {
  const auto ann = load_annotations(o.annotations);
  int n_classes = 0;
  const auto preds = load_predictions(o.predictions, &n_classes);
  if (ann.scenes.empty()) throw EmptyInput(o.annotations + " has no scenes");
  if (preds.empty()) throw EmptyInput(o.predictions + " has no scenes");
  const int id = o.image_id.value_or(ann.scenes.front().image_id);
  const auto scene = std::find_if(ann.scenes.begin(), ann.scenes.end(), [&](const auto& s) { return s.image_id == id; });
  const auto pred = std::find_if(preds.begin(), preds.end(), [&](const auto& s) { return s.image_id == id; });
  if (scene == ann.scenes.end()) throw EmptyInput("no annotated image with id " + std::to_string(id));
  if (pred == preds.end()) throw EmptyInput("no predictions for image id " + std::to_string(id));
  const TargetSet targets = scene->targets();
  for (const auto& obj : targets.objects)
    if (obj.class_id >= n_classes)
      throw ParseError(o.annotations, "class_id", "class " + std::to_string(obj.class_id) + " outside predictions' range");

  MatchCostConfig cfg;
  cfg.variant = parse_match_variant(o.variant);
  if (o.l1_weight) cfg.box_l1_weight = *o.l1_weight;
  if (o.giou_weight) cfg.box_giou_weight = *o.giou_weight;
  cfg.validate();

  const CostMatrix cost = build_cost_matrix(targets, pred->predictions, cfg);
  const Assignment a = hungarian_assign(cost);
  const double total = assignment_cost(cost, a);

  if (o.json) {
    nlohmann::json j;
    j["image_id"] = id;
    j["variant"] = to_string(cfg.variant);
    j["cost"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(cost.cols()));
      for (Eigen::Index k = 0; k < cost.cols(); ++k) row[static_cast<std::size_t>(k)] = cost(i, k);
      j["cost"].push_back(row);
    }
    j["pairs"] = nlohmann::json::array();
    for (const auto& [gt, slot] : a.pairs) j["pairs"].push_back({gt, slot});
    j["total_cost"] = total;
    std::cout << j.dump(2) << '\n';
    return kExitOk;
  }

  std::cout << "image " << id << ", variant " << to_string(cfg.variant) << ", " << cost.rows() << " objects x "
            << cost.cols() << " slots\n";
  std::cout << "cost matrix (rows: ground truth, columns: slots)\n" << std::setprecision(6);
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    for (Eigen::Index k = 0; k < cost.cols(); ++k) std::cout << (k ? " " : "  ") << std::setw(11) << cost(i, k);
    std::cout << '\n';
  }
  std::cout << "pairs (ground truth -> slot)\n";
  for (const auto& [gt, slot] : a.pairs) std::cout << "  " << gt << " -> " << slot << "  cost " << cost(gt, slot) << '\n';
  std::cout << std::setprecision(17) << "total cost " << total << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct MetricsOptions {
  CommonOptions common;
  std::string annotations;
  std::string predictions;
  std::string catalog;
  std::optional<double> score_threshold;
};

int cmd_metrics(const MetricsOptions& o) {
  RunConfig c = base_config(o.common);
  if (o.score_threshold) c.eval.score_threshold = *o.score_threshold;
  c.validate();
  const auto ann = load_annotations(o.annotations);
  const auto catalog = load_catalog(o.catalog);
  int n_classes = 0;
  const auto preds = load_predictions(o.predictions, &n_classes);
  if (n_classes != catalog.num_classes())
    throw ConfigError("predictions have " + std::to_string(n_classes) + " classes, catalog has " +
                      std::to_string(catalog.num_classes()));

  const auto points = catalog.points_table();
  std::vector<EvalRecord> records;
  for (const auto& s : ann.scenes) {
    const auto it = std::find_if(preds.begin(), preds.end(), [&](const auto& p) { return p.image_id == s.image_id; });
    const PredictionSet empty;
    const auto targets = s.targets();
    for (const auto& obj : targets.objects)
      if (obj.class_id < 0 || obj.class_id >= catalog.num_classes())
        throw ParseError(o.annotations, "class_id", "class " + std::to_string(obj.class_id) + " not in catalog");
    auto r = evaluate_scene(s.image_id, it == preds.end() ? empty : it->predictions, targets, points,
                            c.eval.score_threshold);
    records.insert(records.end(), r.begin(), r.end());
  }

  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_effective_config(out.string(), c);
  const auto table = write_metric_outputs(out, records, catalog.class_table(), c.eval.auc_max_threshold);
  std::cout << "evaluated " << ann.scenes.size() << " images, " << records.size() << " objects\n";
  print_table(table);
  return kExitOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateInput& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateBox& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-prediction 6D pose estimation: synthetic data, training, evaluation and matching tools"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset (PPM images, annotations.json, catalog.json)");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes to generate")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--min-objects", gen.min_objects, "Fewest objects per scene")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--max-objects", gen.max_objects, "Most objects per scene")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--points-per-object", gen.points, "Model points kept per object")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--mesh", gen.meshes, "ASCII PLY mesh, one class per file (replaces the built-in objects)");
  gen_cmd->add_option("--mesh-units", gen.mesh_units, "Units of --mesh coordinates")
      ->check(CLI::IsMember({"m", "mm"}))
      ->capture_default_str();
  gen_cmd->add_option("--symmetric-classes", gen.symmetric_classes, "Class ids of --mesh objects that are symmetric");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the pose transformer; writes checkpoint.json and loss_log.csv");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--data", tr.data_dir, "Dataset directory produced by gen-data");
  train_cmd->add_option("--iterations", tr.iterations, "Number of optimizer steps")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch-size", tr.batch_size, "Images per step")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr-after-decay", tr.lr_after_decay, "Learning rate after the decay step")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--decay-at", tr.decay_at, "Iteration at which the learning rate drops")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--grad-clip", tr.clip, "Maximal global gradient norm")->check(CLI::PositiveNumber);
  train_cmd->add_option("--threads", tr.threads, "Worker threads for per-image passes (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--freeze-transformer", tr.freeze_transformer, "Train only the prediction heads");
  train_cmd->add_flag("--aux-loss", tr.aux_loss, "Also apply the loss to every intermediate decoder layer");
  train_cmd->add_flag("--allocentric", tr.allocentric, "Predict allocentric rotations");
  train_cmd->add_option("--init-checkpoint", tr.init_checkpoint, "Start from this checkpoint instead of a fresh init");
  train_cmd->add_option("--pose-loss", tr.pose_loss, "Pose loss: disentangled, point_matching or ploss_only");
  train_cmd->add_option("--match-variant", tr.match_variant, "Matching cost: object_only or with_pose");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (or ground truth) on a dataset");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("--data", ev.data_dir, "Dataset directory produced by gen-data");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  eval_cmd->add_flag("--oracle", ev.oracle, "Evaluate the ground truth itself as predictions");
  eval_cmd->add_option("--score-threshold", ev.score_threshold, "Ignore predictions whose class score is lower")
      ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--attention-image", ev.attention_image,
                       "Also write attention.json with the attention matrices for this image id");

  MatchDebugOptions md;
  auto* md_cmd = app.add_subcommand("match-debug", "Print the matching cost matrix and optimal assignment for one image");
  md_cmd->add_option("--annotations", md.annotations, "Annotation JSON with the ground truth")
      ->required();
  md_cmd->add_option("--predictions", md.predictions, "Predictions JSON")->required();
  md_cmd->add_option("--image-id", md.image_id, "Image to match (default: first annotated image)");
  md_cmd->add_option("--variant", md.variant, "Matching cost: object-only or with-pose")->capture_default_str();
  md_cmd->add_option("--l1-weight", md.l1_weight, "Weight of the L1 box term")->check(CLI::NonNegativeNumber);
  md_cmd->add_option("--giou-weight", md.giou_weight, "Weight of the GIoU box term")->check(CLI::NonNegativeNumber);
  md_cmd->add_flag("--json", md.json, "Machine-readable output");

  MetricsOptions mt;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute ADD/ADD-S/AUC/0.1d metrics from annotation and prediction files");
  add_common(metrics_cmd, mt.common);
  metrics_cmd->add_option("--annotations", mt.annotations, "Annotation JSON")->required();
  metrics_cmd->add_option("--predictions", mt.predictions, "Predictions JSON")->required();
  metrics_cmd->add_option("--catalog", mt.catalog, "Catalog JSON with model points and symmetry flags")
      ->required();
  metrics_cmd->add_option("--score-threshold", mt.score_threshold, "Ignore predictions whose class score is lower")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*gen_cmd) return guarded([&] { return cmd_gen_data(gen); });
  if (*train_cmd) return guarded([&] { return cmd_train(tr); });
  if (*eval_cmd) return guarded([&] { return cmd_eval(ev); });
  if (*md_cmd) return guarded([&] { return cmd_match_debug(md); });
  if (*metrics_cmd) return guarded([&] { return cmd_metrics(mt); });
  return kExitUsage;
}
