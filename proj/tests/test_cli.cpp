#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "precog/checkpoint.hpp"
#include "precog/espflow.hpp"
#include "precog/scene.hpp"
#include "test_support.hpp"

namespace precog {
namespace {

namespace fs = std::filesystem;
using testing::read_file;
using testing::temp_dir;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "precog-test-cli-io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  const fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd = env + " " + PRECOG_CLI_PATH + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

// A small dataset and a one-epoch model shared by the tests below.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = temp_dir("cli");
    data_ = root_ / "data";
    model_dir_ = root_ / "model";
    const RunResult gen = run("gen-didactic --out " + data_.string() +
                              " --seed 3 --n-train 12 --n-val 4 --n-test 4");
    ASSERT_EQ(gen.code, 0) << gen.err;
    const RunResult tr = run("train --data " + data_.string() + " --out " +
                             model_dir_.string() +
                             " --seed 3 --epochs 1 --lr 1e-3 --batch-size 4");
    ASSERT_EQ(tr.code, 0) << tr.err;
  }

  static std::string data() { return data_.string(); }
  static std::string model() { return (model_dir_ / "model.ckpt").string(); }
  static fs::path out(const std::string& name) { return root_ / name; }

  static fs::path root_;
  static fs::path data_;
  static fs::path model_dir_;
};

fs::path Cli::root_;
fs::path Cli::data_;
fs::path Cli::model_dir_;

TEST(CliHelp, ListsEveryCommandAndFlag) {
  const RunResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s :
       {"gen-didactic", "train", "eval", "forecast", "plan", "scan", "--data", "--out",
        "--seed", "--k", "--mode", "--noise-std", "--goal-variance", "--crash-threshold",
        "--jobs", "--epochs", "--lr", "--model", "--kde", "--curve", "--max-iters", "--grid-n"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
}

TEST(CliHelp, UnknownFlagsAndMissingInputsAreValidationErrors) {
  EXPECT_EQ(run("train --bogus").code, 1);
  EXPECT_EQ(run("train --out " + temp_dir("cli-missing").string()).code, 1);
  EXPECT_EQ(run("eval --data /nonexistent --out " + temp_dir("cli-missing2").string() + " --kde")
                .code,
            1);
}

TEST_F(Cli, GenerationWritesSplitsAndConfig) {
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "config.json"}) {
    EXPECT_TRUE(fs::exists(data_ / f)) << f;
  }
  EXPECT_EQ(load_dataset(data_ / "train.jsonl").scenes.size(), 12u);
  const auto cfg = nlohmann::json::parse(read_file(data_ / "config.json"));
  EXPECT_EQ(cfg["command"], "gen-didactic");
  EXPECT_EQ(cfg["options"]["seed"], 3);
  EXPECT_EQ(cfg["options"]["didactic"]["n_train"], 12);
}

TEST_F(Cli, TrainingWritesCheckpointHistoryAndConfig) {
  const EspModel m = load_checkpoint(model_dir_ / "model.ckpt");
  EXPECT_EQ(m.config.mode, Mode::kJoint);
  EXPECT_EQ(m.config.horizon, 20);
  const std::string history = read_file(model_dir_ / "history.csv");
  EXPECT_EQ(history.substr(0, history.find('\n')), "epoch,train_nll,val_e_hat,seconds");
  const auto cfg = nlohmann::json::parse(read_file(model_dir_ / "config.json"));
  EXPECT_EQ(cfg["command"], "train");
  EXPECT_EQ(cfg["options"]["train"]["max_epochs"], 1);
  EXPECT_EQ(cfg["options"]["train"]["learning_rate"], 1e-3);
}

TEST_F(Cli, EvalWritesReportsForEveryModel) {
  const fs::path dir = out("eval");
  const RunResult r = run("eval --data " + data() + " --out " + dir.string() + " --model " +
                          model() + " --kde --k 3 --curve 1 3 --seed 5");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file(dir / "metrics.json"));
  ASSERT_EQ(j["reports"].size(), 2u);
  EXPECT_EQ(j["reports"][0]["model"], "esp");
  EXPECT_EQ(j["reports"][1]["model"], "kde");
  EXPECT_TRUE(j.contains("kde_bandwidth"));
  const std::string csv = read_file(dir / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(dir / "min_msd_curve.csv"));
  EXPECT_EQ(read_file(dir / "min_msd_curve.svg").rfind("<svg", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST_F(Cli, EvalOnAnEmptyTestSetFails) {
  const fs::path empty = out("empty-data");
  fs::create_directories(empty);
  std::ofstream(empty / "test.jsonl").close();
  const RunResult r =
      run("eval --data " + empty.string() + " --out " + out("eval-empty").string() + " --model " + model());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}

TEST_F(Cli, ForecastIsByteIdenticalAcrossRuns) {
  const std::string args = "forecast --data " + data() + " --model " + model() +
                           " --k 12 --seed 7 --scenes 2 --svg-count 1 --out ";
  ASSERT_EQ(run(args + out("fc1").string()).code, 0);
  ASSERT_EQ(run(args + out("fc2").string() + " --jobs 2").code, 0);
  const std::string a = read_file(out("fc1") / "samples.json");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, read_file(out("fc2") / "samples.json"));
  bool svg = false;
  for (const auto& e : fs::directory_iterator(out("fc1"))) {
    svg |= e.path().extension() == ".svg";
  }
  EXPECT_TRUE(svg);
}

TEST_F(Cli, PlanWritesResultsAndComparison) {
  const fs::path dir = out("plan");
  const RunResult r = run("plan --data " + data() + " --model " + model() + " --out " +
                          dir.string() + " --k 3 --scenes 2 --max-iters 3 --seed 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string plans = read_file(dir / "plans.jsonl");
  EXPECT_EQ(std::count(plans.begin(), plans.end(), '\n'), 2);
  const auto first = nlohmann::json::parse(plans.substr(0, plans.find('\n')));
  EXPECT_TRUE(first["plan"].contains("z_r"));
  EXPECT_TRUE(first["plan"].contains("objective_trace"));
  const std::string cmp = read_file(dir / "comparison.csv");
  EXPECT_EQ(cmp.rfind("method,m_hat", 0), 0u);
  EXPECT_NE(cmp.find("precog"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST_F(Cli, ScanWritesTheSurface) {
  const fs::path dir = out("scan");
  const RunResult r = run("scan --data " + data() + " --model " + model() + " --out " +
                          dir.string() + " --k 2 --grid-n 2 --max-iters 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read_file(dir / "scan.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x,y,lhat");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(read_file(dir / "scan.svg").rfind("<svg", 0), 0u);
}

TEST_F(Cli, BadOptionValuesAreValidationErrors) {
  const std::string base = "forecast --data " + data() + " --model " + model() + " --out " +
                           out("bad").string();
  EXPECT_EQ(run(base + " --k 0").code, 1);
  EXPECT_EQ(run(base + " --mode both").code, 1);
  EXPECT_EQ(run(base + " --crash-threshold 0").code, 1);
}

TEST_F(Cli, NumericalFailureExitsWithTwo) {
  EspModel m = load_checkpoint(model_dir_ / "model.ckpt");
  m.theta.setConstant(std::nan(""));
  const fs::path bad = out("nan.ckpt");
  save_checkpoint(m, bad);
  const RunResult r = run("forecast --data " + data() + " --model " + bad.string() +
                          " --k 2 --scenes 1 --out " + out("nan").string());
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(Cli, LogLevelComesFromTheEnvironment) {
  const std::string args = "forecast --data " + data() + " --model " + model() +
                           " --k 2 --scenes 1 --svg-count 0 --out " + out("log").string();
  const RunResult quiet = run(args, "PRECOG_LOG=off");
  ASSERT_EQ(quiet.code, 0);
  EXPECT_TRUE(quiet.err.empty()) << quiet.err;
  const RunResult verbose = run(args, "PRECOG_LOG=debug");
  ASSERT_EQ(verbose.code, 0);
  EXPECT_FALSE(verbose.err.empty());
}

}  // namespace
}  // namespace precog
