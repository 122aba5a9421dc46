#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_support.hpp"
#include "wgmri/errors.hpp"
#include "wgmri/phantom.hpp"
#include "wgmri/trainer.hpp"
#include "wgmri_cli/cli.hpp"

using namespace wgmri;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "wgmri");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyRun = R"({
  "seed": 3,
  "dataset": {"inputs": 6, "labels": 4, "regime": "disjoint", "height": 16, "width": 16,
              "calib_size": [4, 4], "heldout": 2},
  "trainer": {"batch_size": 2, "total_gen_steps": 2, "eval_every": 1,
              "objective": {"critic_steps_per_gen_step": 2},
              "generator": {"unroll_iterations": 1, "residual_blocks": 1, "feature_width": 4},
              "critic": {"base_features": 2, "strided_layers": 2, "tail_features": [4, 4, 1]}}
})";

class EnvGuard {
 public:
  EnvGuard(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value.c_str(), 1);
  }
  ~EnvGuard() {
    if (old_) ::setenv(name_, old_->c_str(), 1);
    else ::unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"train"}).code, 2);
  EXPECT_EQ(run_cli({"dataset", "make", "--out", "x.wga", "--bogus", "1"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(cli::version()), std::string::npos);
}

TEST(Cli, ProcessExitStatus) {
  const std::string bin = WGMRI_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("--no-such-flag"), 2);
  EXPECT_EQ(status("eval --checkpoint /nonexistent/c.wgc --dataset /nonexistent/d.wga --out /tmp/x"), 1);
}

TEST(Cli, DatasetMake) {
  test::TempDir dir("cli_data");
  auto r = run_cli({"dataset", "make", "--out", (dir / "d.wga").string(), "--heldout-out", (dir / "h.wga").string(),
                    "--heldout", "3", "--inputs", "5", "--labels", "3", "--regime", "disjoint", "--height", "16",
                    "--width", "16", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto split = load_split(dir / "d.wga");
  EXPECT_EQ(split.input_count(), 5);
  EXPECT_EQ(split.label_count(), 3);
  EXPECT_EQ(split.regime, Regime::disjoint);
  EXPECT_EQ(split.seed, 9u);
  EXPECT_EQ(load_split(dir / "h.wga").input_count(), 3);
  auto again = run_cli({"dataset", "make", "--out", (dir / "e.wga").string(), "--inputs", "5", "--labels", "3",
                        "--regime", "disjoint", "--height", "16", "--width", "16", "--seed", "9"});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(dir / "d.wga"), slurp(dir / "e.wga"));
  EXPECT_EQ(run_cli({"dataset", "make", "--out", (dir / "f.wga").string(), "--regime", "sideways"}).code, 2);
  EXPECT_EQ(run_cli({"dataset", "make", "--out", (dir / "f.wga").string(), "--regime", "paired", "--labels", "3"}).code,
            2);
}

TEST(Cli, RunConfigRoundTripAndDefaults) {
  auto c = cli::run_config_from_json(kTinyRun);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.trainer.seed, 3u);
  EXPECT_EQ(c.dataset.split.seed, 3u);
  EXPECT_EQ(c.dataset.split.inputs, 6);
  EXPECT_EQ(c.trainer.learning_rate, 1e-4);
  auto text = cli::run_config_to_json(c);
  EXPECT_EQ(cli::run_config_to_json(cli::run_config_from_json(text)), text);
  auto j = nlohmann::json::parse(text);
  for (const char* key : {"seed", "output_dir", "dataset", "trainer", "checkpoint_every"}) EXPECT_TRUE(j.contains(key));
  EXPECT_TRUE(j["trainer"]["objective"].contains("lambda_schedule"));
  EXPECT_EQ(j["dataset"]["label_mode"], "complex");
}

TEST(Cli, MalformedConfigNamesTheField) {
  auto expect_field = [](const std::string& text, const std::string& field) {
    try {
      cli::run_config_from_json(text);
      FAIL() << "accepted " << text;
    } catch (const ParameterError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field(R"({"sed": 1})", "sed");
  expect_field(R"({"dataset": {"inputz": 1}})", "dataset.inputz");
  expect_field(R"({"dataset": {"height": "tall"}})", "dataset.height");
  expect_field(R"({"trainer": {"objective": {"family": "gan"}}})", "gan");
  expect_field(R"({"trainer": {"critic": {"widht": 3}}})", "critic.widht");
  expect_field(R"({"trainer": {"seed": 3}})", "trainer.seed");
  expect_field(R"({"trainer": {"learning_rate": -1}})", "learning_rate");

  test::TempDir dir("cli_bad");
  spit(dir / "bad.json", R"({"dataset": {"regime": "disjoint", "labelz": 3}})");
  auto r = run_cli({"train", "--config", (dir / "bad.json").string(), "--output-dir", (dir / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset.labelz"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"train", "--config", (dir / "missing.json").string()}).code, 1);
}

TEST(Cli, TrainWritesSelfDescribingRun) {
  test::TempDir dir("cli_train");
  spit(dir / "run.json", kTinyRun);
  const std::string config = slurp(dir / "run.json");
  auto r = run_cli({"train", "--config", (dir / "run.json").string(), "--output-dir", (dir / "a").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "run.json"), config);
  auto resolved = nlohmann::json::parse(slurp(dir / "a" / "resolved_config.json"));
  EXPECT_EQ(resolved["tool_version"], cli::version());
  EXPECT_EQ(resolved["seed"], 3);
  EXPECT_EQ(resolved["trainer"]["adam_beta1"], 0.9);
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "checkpoint.wgc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "eval.json"));
  auto rows = read_metric_log(dir / "a" / "metrics.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[1].eval_psnr.has_value());

  // Reproducible from the resolved config alone.
  ASSERT_EQ(run_cli({"train", "--config", (dir / "a" / "resolved_config.json").string(), "--output-dir",
                     (dir / "b").string()})
                .code,
            0);
  auto again = read_metric_log(dir / "b" / "metrics.csv");
  ASSERT_EQ(again.size(), rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(again[i].loss_d, rows[i].loss_d, 1e-6);
    EXPECT_NEAR(again[i].loss_g, rows[i].loss_g, 1e-6);
    EXPECT_NEAR(again[i].gp, rows[i].gp, 1e-6);
    EXPECT_NEAR(*again[i].eval_psnr, *rows[i].eval_psnr, 1e-6);
    EXPECT_NEAR(*again[i].eval_ssim, *rows[i].eval_ssim, 1e-6);
  }
}

TEST(Cli, TrainRefusesToOverwriteAndResumes) {
  test::TempDir dir("cli_resume");
  spit(dir / "run.json", kTinyRun);
  const auto cfg = (dir / "run.json").string(), out = (dir / "r").string();
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--output-dir", out}).code, 0);
  auto again = run_cli({"train", "--config", cfg, "--output-dir", out});
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("--resume"), std::string::npos);
  EXPECT_EQ(read_metric_log(dir / "r" / "metrics.csv").size(), 2u);

  ASSERT_EQ(run_cli({"train", "--config", cfg, "--output-dir", (dir / "s").string(), "--steps", "4"}).code, 0);
  auto resumed = run_cli({"train", "--config", cfg, "--output-dir", out, "--steps", "4", "--resume"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  auto straight = read_metric_log(dir / "s" / "metrics.csv");
  auto joined = read_metric_log(dir / "r" / "metrics.csv");
  ASSERT_EQ(joined.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(joined[i].loss_d, straight[i].loss_d, 1e-6);
    EXPECT_NEAR(joined[i].loss_g, straight[i].loss_g, 1e-6);
  }
  auto changed = run_cli({"train", "--config", cfg, "--output-dir", out, "--steps", "5", "--resume", "--seed", "4"});
  EXPECT_EQ(changed.code, 2);
}

TEST(Cli, EvalPassthroughAndPanels) {
  test::TempDir dir("cli_eval");
  ASSERT_EQ(run_cli({"dataset", "make", "--out", (dir / "d.wga").string(), "--inputs", "3", "--labels", "3",
                     "--height", "16", "--width", "16"})
                .code,
            0);
  const auto before = slurp(dir / "d.wga");
  auto r = run_cli({"eval", "--passthrough", "ground-truth", "--dataset", (dir / "d.wga").string(), "--out",
                    (dir / "gt").string(), "--panels", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "d.wga"), before);
  auto report = nlohmann::json::parse(slurp(dir / "gt" / "report.json"));
  for (const auto& row : report["per_image"]) EXPECT_EQ(row["psnr"], "inf");
  EXPECT_EQ(report["aggregate"]["count"], 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "gt" / "panel_1.pgm"));
  EXPECT_FALSE(std::filesystem::exists(dir / "gt" / "panel_2.pgm"));
  const auto pgm = slurp(dir / "gt" / "panel_0.pgm");
  EXPECT_EQ(pgm.rfind("P5\n48 16\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n48 16\n255\n").size() + 48 * 16);

  auto zf = run_cli({"eval", "--passthrough", "zero-filled", "--dataset", (dir / "d.wga").string(), "--out",
                     (dir / "zf").string()});
  ASSERT_EQ(zf.code, 0);
  EXPECT_NE(slurp(dir / "zf" / "report.csv").find("mean,"), std::string::npos);
  EXPECT_EQ(run_cli({"eval", "--passthrough", "oracle", "--dataset", (dir / "d.wga").string(), "--out",
                     (dir / "x").string()})
                .code,
            2);
  EXPECT_EQ(run_cli({"eval", "--dataset", (dir / "d.wga").string(), "--out", (dir / "x").string()}).code, 2);
}

TEST(Cli, EvalCheckpoint) {
  test::TempDir dir("cli_eval_ckpt");
  spit(dir / "run.json", kTinyRun);
  ASSERT_EQ(run_cli({"train", "--config", (dir / "run.json").string(), "--output-dir", (dir / "r").string()}).code, 0);
  ASSERT_EQ(run_cli({"dataset", "make", "--config", (dir / "run.json").string(), "--out", (dir / "d.wga").string(),
                     "--heldout-out", (dir / "h.wga").string()})
                .code,
            0);
  auto r = run_cli({"eval", "--checkpoint", (dir / "r" / "checkpoint.wgc").string(), "--dataset",
                    (dir / "h.wga").string(), "--out", (dir / "e").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = nlohmann::json::parse(slurp(dir / "e" / "report.json"));
  auto trained = nlohmann::json::parse(slurp(dir / "r" / "eval.json"));
  EXPECT_NEAR(report["aggregate"]["mean_psnr"].get<double>(), trained["aggregate"]["mean_psnr"].get<double>(), 1e-9);
  EXPECT_EQ(run_cli({"eval", "--checkpoint", (dir / "nope.wgc").string(), "--dataset", (dir / "h.wga").string(),
                     "--out", (dir / "e2").string()})
                .code,
            1);
}

TEST(Cli, OutputRootEnvironment) {
  test::TempDir dir("cli_root");
  EnvGuard env("WGMRI_OUTPUT_ROOT", dir.path().string());
  EXPECT_EQ(cli::output_path("x/y"), dir / "x/y");
  EXPECT_EQ(cli::output_path("/abs/p"), std::filesystem::path("/abs/p"));
  ASSERT_EQ(run_cli({"dataset", "make", "--out", "sets/d.wga", "--inputs", "2", "--labels", "2", "--height", "16",
                     "--width", "16"})
                .code,
            0);
  EXPECT_TRUE(std::filesystem::exists(dir / "sets" / "d.wga"));
}

TEST(Cli, OracleCheckWritesTable) {
  test::TempDir dir("cli_oracle");
  auto r = run_cli({"oracle-check", "--out", (dir / "o.csv").string(), "--steps", "30"});
  ASSERT_TRUE(r.code == 0 || r.code == 1) << r.err;
  std::istringstream csv(slurp(dir / "o.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "case,exact_w1,critic_estimate,relative_error,pass");
  int rows = 0, failed = 0;
  while (std::getline(csv, line)) {
    ++rows;
    if (line.size() >= 5 && line.substr(line.size() - 5) == "false") ++failed;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(r.code, failed ? 1 : 0);
}
