#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef T6D_CLI_PATH
#error "T6D_CLI_PATH must point at the t6d executable"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

/// Scratch directory private to the running test (ctest runs tests as parallel processes).
fs::path work_dir() {
  static const fs::path dir = [] {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    const auto d = fs::temp_directory_path() / "t6d_cli_tests" / info->name();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run(const std::string& args) {
  const auto log = work_dir() / "stdout.txt";
  const std::string cmd = std::string("\"") + T6D_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

/// Small dataset shared by the tests that need one.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "data";
    const auto r = run("gen-data --scenes 4 --seed 11 --out " + d.string());
    EXPECT_EQ(r.code, 0) << r.out;
    return d;
  }();
  return dir;
}

nlohmann::json toy_annotations() {
  nlohmann::json obj_a = {{"class_id", 0},
                          {"R", {1, 0, 0, 0, 1, 0, 0, 0, 1}},
                          {"t", {0.0, 0.0, 0.5}},
                          {"bbox", {0.25, 0.25, 0.2, 0.2}}};
  nlohmann::json obj_b = obj_a;
  obj_b["bbox"] = {0.75, 0.75, 0.2, 0.2};
  return {{"version", 1},
          {"camera", {{"fx", 70.0}, {"fy", 70.0}, {"cx", 32.0}, {"cy", 32.0}, {"width", 64}, {"height", 64}}},
          {"scenes", {{{"image_id", 0}, {"file", "000000.ppm"}, {"objects", {obj_a, obj_b}}}}}};
}

nlohmann::json toy_predictions() {
  auto slot = [](double cx, double cy) {
    return nlohmann::json{{"class_logits", {10.0, -10.0}},
                          {"bbox", {cx, cy, 0.2, 0.2}},
                          {"rot6d", {1, 0, 0, 0, 1, 0}},
                          {"t", {0.0, 0.0, 0.5}}};
  };
  return {{"version", 1},
          {"n_classes", 1},
          {"scenes", {{{"image_id", 0}, {"predictions", {slot(0.75, 0.75), slot(0.25, 0.25)}}}}}};
}

fs::path write_json(const std::string& name, const nlohmann::json& j) {
  const auto p = work_dir() / name;
  std::ofstream(p) << j.dump(1);
  return p;
}

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  EXPECT_EQ(run("--help").code, 0);
  for (const char* sub : {"gen-data", "train", "eval", "match-debug", "metrics"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("teleport").code, 1);
  EXPECT_EQ(run("gen-data --scenes -3").code, 1);
  EXPECT_EQ(run("train --no-such-flag").code, 1);
  EXPECT_EQ(run("match-debug --annotations a.json").code, 1);
}

TEST(Cli, GenDataWritesRequestedScenesDeterministically) {
  const auto a = work_dir() / "gen_a", b = work_dir() / "gen_b";
  ASSERT_EQ(run("gen-data --scenes 3 --seed 5 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data --scenes 3 --seed 5 --out " + b.string()).code, 0);
  const auto ann = nlohmann::json::parse(slurp(a / "annotations.json"));
  ASSERT_EQ(ann["scenes"].size(), 3u);
  for (const auto& name : {"annotations.json", "catalog.json", "000000.ppm", "000001.ppm", "000002.ppm"}) {
    ASSERT_TRUE(fs::exists(a / name)) << name;
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
  EXPECT_TRUE(fs::exists(a / "effective_config.json"));

  const auto c = work_dir() / "gen_c";
  ASSERT_EQ(run("gen-data --scenes 3 --seed 6 --out " + c.string()).code, 0);
  EXPECT_NE(slurp(a / "annotations.json"), slurp(c / "annotations.json"));
}

TEST(Cli, GenDataWithZeroScenes) {
  const auto d = work_dir() / "gen_empty";
  const auto r = run("gen-data --scenes 0 --out " + d.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(nlohmann::json::parse(slurp(d / "annotations.json"))["scenes"].empty());
}

TEST(Cli, GenDataHonoursObjectCounts) {
  const auto d = work_dir() / "gen_counts";
  ASSERT_EQ(run("gen-data --scenes 5 --min-objects 2 --max-objects 2 --out " + d.string()).code, 0);
  for (const auto& s : nlohmann::json::parse(slurp(d / "annotations.json"))["scenes"]) EXPECT_EQ(s["objects"].size(), 2u);
  EXPECT_EQ(run("gen-data --scenes 1 --min-objects 3 --max-objects 1 --out " + d.string()).code, 1);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const auto d = work_dir() / "env_out";
  const std::string cmd = "T6D_OUTPUT_DIR=\"" + d.string() + "\" \"" + T6D_CLI_PATH + "\" gen-data --scenes 1 > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(d / "annotations.json"));
}

TEST(Cli, TrainWritesOneLogRowPerIteration) {
  const auto out = work_dir() / "train";
  const auto r = run("train --data " + dataset().string() + " --iterations 3 --batch-size 2 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto log = lines(slurp(out / "loss_log.csv"));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0], "iteration,total,class,box,pose,lr");
  EXPECT_EQ(log[1].substr(0, 2), "0,");
  EXPECT_EQ(lines(slurp(out / "grad_norms.csv")).size(), 4u);
  EXPECT_TRUE(fs::exists(out / "checkpoint.json"));
  const auto cfg = nlohmann::json::parse(slurp(out / "effective_config.json"));
  EXPECT_EQ(cfg["train"]["total_iterations"], 3);
  EXPECT_EQ(cfg["train"]["batch_size"], 2);
  EXPECT_EQ(cfg["train"]["lr"], 1e-4);
}

TEST(Cli, TrainThenEvalThenStandaloneMetricsAgree) {
  const auto tr = work_dir() / "train2", ev = work_dir() / "eval2", mt = work_dir() / "metrics2";
  ASSERT_EQ(run("train --data " + dataset().string() + " --iterations 1 --out " + tr.string()).code, 0);
  const auto r = run("eval --data " + dataset().string() + " --checkpoint " + (tr / "checkpoint.json").string() +
                     " --attention-image 0 --out " + ev.string());
  ASSERT_EQ(r.code, 0) << r.out;
  for (const auto& name : {"predictions.json", "metrics.csv", "curve_add_s.csv", "curve_add_sym_aware.csv", "records.csv",
                           "attention.json"})
    EXPECT_TRUE(fs::exists(ev / name)) << name;
  const auto m = run("metrics --annotations " + (dataset() / "annotations.json").string() + " --predictions " +
                     (ev / "predictions.json").string() + " --catalog " + (dataset() / "catalog.json").string() +
                     " --out " + mt.string());
  ASSERT_EQ(m.code, 0) << m.out;
  EXPECT_EQ(slurp(mt / "metrics.csv"), slurp(ev / "metrics.csv"));
}

TEST(Cli, OracleEvaluationIsPerfect) {
  const auto ev = work_dir() / "oracle";
  ASSERT_EQ(run("eval --oracle --data " + dataset().string() + " --out " + ev.string()).code, 0);
  const auto rows = lines(slurp(ev / "metrics.csv"));
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0], "class,auc_add_s,auc_add_sym_aware,add01d,n_records");
  std::istringstream mean(rows.back());
  std::string label;
  std::getline(mean, label, ',');
  EXPECT_EQ(label, "mean");
  for (int k = 0; k < 3; ++k) {
    std::string v;
    std::getline(mean, v, ',');
    EXPECT_NEAR(std::stod(v), 1.0, 1e-12);
  }
}

TEST(Cli, EvalNeedsExactlyOneSource) {
  EXPECT_EQ(run("eval --data " + dataset().string()).code, 1);
  EXPECT_EQ(run("eval --oracle --checkpoint x.json --data " + dataset().string()).code, 1);
}

TEST(Cli, MatchDebugOnToyScene) {
  const auto ann = write_json("toy_ann.json", toy_annotations());
  const auto pred = write_json("toy_pred.json", toy_predictions());
  const auto r = run("match-debug --json --annotations " + ann.string() + " --predictions " + pred.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["pairs"], nlohmann::json::parse("[[0,1],[1,0]]"));
  // p = softmax([10, -10])[0]; off-diagonal: GIoU loss 1 + 0.41/0.49 and L1 distance 1
  const double p = 1.0 / (1.0 + std::exp(-20.0));
  const double off = -p + 2.0 * (1.0 + 0.41 / 0.49) + 5.0 * 1.0;
  EXPECT_NEAR(j["cost"][0][1].get<double>(), -p, 1e-12);
  EXPECT_NEAR(j["cost"][1][0].get<double>(), -p, 1e-12);
  EXPECT_NEAR(j["cost"][0][0].get<double>(), off, 1e-12);
  EXPECT_NEAR(j["cost"][1][1].get<double>(), off, 1e-12);
  const double total = j["total_cost"].get<double>();
  EXPECT_NEAR(total, j["cost"][0][1].get<double>() + j["cost"][1][0].get<double>(), 1e-15);
  EXPECT_NEAR(total, -2.0 * p, 1e-12);

  const auto text = run("match-debug --annotations " + ann.string() + " --predictions " + pred.string());
  ASSERT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("0 -> 1"), std::string::npos);
  EXPECT_NE(text.out.find("1 -> 0"), std::string::npos);
  EXPECT_NE(text.out.find("total cost"), std::string::npos);

  const auto pose = run("match-debug --json --variant with-pose --annotations " + ann.string() + " --predictions " + pred.string());
  ASSERT_EQ(pose.code, 0);
  EXPECT_EQ(nlohmann::json::parse(pose.out)["variant"], "with_pose");
}

TEST(Cli, DataErrorsExitWithTwo) {
  const auto ann = write_json("toy_ann2.json", toy_annotations());
  const auto pred = write_json("toy_pred2.json", toy_predictions());
  EXPECT_EQ(run("match-debug --annotations missing.json --predictions " + pred.string()).code, 2);
  auto bad = toy_annotations();
  bad["scenes"][0]["objects"][0].erase("bbox");
  const auto r = run("match-debug --annotations " + write_json("bad_ann.json", bad).string() + " --predictions " +
                     pred.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bbox"), std::string::npos);
  std::ofstream(work_dir() / "garbage.json") << "{ not json";
  EXPECT_EQ(run("match-debug --annotations " + (work_dir() / "garbage.json").string() + " --predictions " + pred.string()).code, 2);
  EXPECT_EQ(run("match-debug --image-id 9 --annotations " + ann.string() + " --predictions " + pred.string()).code, 2);
  EXPECT_EQ(run("train --data " + (work_dir() / "nowhere").string()).code, 2);
}

TEST(Cli, ConfigErrorsExitWithOne) {
  const auto ann = write_json("toy_ann3.json", toy_annotations());
  const auto pred = write_json("toy_pred3.json", toy_predictions());
  EXPECT_EQ(run("match-debug --variant greedy --annotations " + ann.string() + " --predictions " + pred.string()).code, 1);
  const auto cfg = write_json("bad_cfg.json", {{"train", {{"learnig_rate", 1.0}}}});
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + dataset().string()).code, 1);
}

TEST(Cli, DivergingTrainingExitsWithThree) {
  const auto out = work_dir() / "diverge";
  const auto r = run("train --data " + dataset().string() + " --iterations 5 --lr 1e300 --out " + out.string());
  EXPECT_EQ(r.code, 3) << r.out;
}
