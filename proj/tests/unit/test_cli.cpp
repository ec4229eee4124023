#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "cli_runner.hpp"
#include "morphdose/checkpoint.hpp"
#include "morphdose/error.hpp"
#include "morphdose/evaluation.hpp"
#include "morphdose/mdp.hpp"
#include "morphdose/seeding.hpp"
#include "morphdose/text_io.hpp"
#include "test_util.hpp"

using namespace morphdose;
using testutil::run_cli;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_contents(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& f : fs::recursive_directory_iterator(dir)) {
    if (f.is_regular_file()) files[fs::relative(f.path(), dir).string()] = testutil::slurp(f.path());
  }
  return files;
}

// synth -> ingest into dir/synth and dir/ingest with a small cohort.
void small_pipeline(const fs::path& dir, const std::string& seed = "3") {
  ASSERT_EQ(run_cli({"synth", "--seed", seed, "--patients", "20", "--hours", "24", "--out", (dir / "synth").string()}).code, 0);
  ASSERT_EQ(run_cli({"ingest", "--seed", seed, "--in", (dir / "synth").string(), "--out", (dir / "ingest").string()}).code, 0);
}

// Checkpoint with fixed weights and a plausible normalizer.
fs::path fixed_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  ck.model.params = QParams::initialize(QNetShape{}, 2024);
  ck.model.normalizer.mean = Eigen::VectorXd::Zero(19);
  ck.model.normalizer.scale = Eigen::VectorXd::Ones(19);
  ck.model.normalizer.mean.head(3) << 5.0, 85.0, 16.0;
  ck.model.normalizer.scale.head(3) << 2.5, 12.0, 3.0;
  ck.metadata = {{"gamma", "0.99"}};
  save_checkpoint(ck, dir / "fixed.ckpt");
  return dir / "fixed.ckpt";
}

const std::string kState = "7,96,15,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0";

}  // namespace

TEST(Cli, HelpAndVersion) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  const auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("0.1.0"), std::string::npos);
  EXPECT_EQ(run_cli({"synth", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"synth", "--seed", "1", "--hours", "5", "--out", "x"}).code, 2);  // --patients missing
  EXPECT_EQ(run_cli({"synth", "--seed", "1", "--patients", "2", "--hours", "5", "--out", "x", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({"synth", "--seed", "1", "--patients", "0", "--hours", "5", "--out", "x"}).code, 2);
  EXPECT_EQ(run_cli({"synth", "--seed", "1", "--patients", "2", "--hours", "5", "--policy", "oracle", "--out", "x"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--seed", "1", "--in", "x", "--out", "y", "--loss", "l1"}).code, 2);
}

TEST(Cli, SeedRequiredUnlessInEnvironment) {
  testutil::TempDir dir("cli-seed");
  const std::vector<std::string> args{"synth", "--patients", "2", "--hours", "4", "--out", (dir / "a").string()};
  unsetenv("MORPHDOSE_SEED");
  EXPECT_EQ(run_cli(args).code, 2);
  setenv("MORPHDOSE_SEED", "9", 1);
  EXPECT_EQ(run_cli(args).code, 0);
  unsetenv("MORPHDOSE_SEED");
  const auto m = nlohmann::json::parse(testutil::slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m["seed"], 9);
}

TEST(Cli, SynthWritesOneFilePerPatientReproducibly) {
  testutil::TempDir dir("cli-synth");
  const auto a = run_cli({"synth", "--seed", "11", "--patients", "100", "--hours", "12", "--out", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run_cli({"synth", "--seed", "11", "--patients", "100", "--hours", "12", "--jobs", "3", "--out",
                      (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  std::size_t n = 0;
  for (const auto& f : fs::directory_iterator(dir / "a" / "events")) n += f.path().extension() == ".csv";
  EXPECT_EQ(n, 100u);
  for (const auto& f : fs::directory_iterator(dir / "a" / "events")) {
    EXPECT_EQ(testutil::slurp(f.path()), testutil::slurp(dir / "b" / "events" / f.path().filename())) << f.path();
  }
  const auto c = run_cli({"synth", "--seed", "12", "--patients", "100", "--hours", "12", "--out", (dir / "c").string()});
  ASSERT_EQ(c.code, 0);
  auto ta = tree_contents(dir / "a" / "events");
  auto tc = tree_contents(dir / "c" / "events");
  EXPECT_NE(ta, tc);
}

TEST(Cli, ManifestFields) {
  testutil::TempDir dir("cli-manifest");
  setenv("SOURCE_DATE_EPOCH", "86400", 1);
  ASSERT_EQ(run_cli({"synth", "--seed", "5", "--patients", "3", "--hours", "6", "--policy", "random", "--out",
                 (dir / "s").string()})
                .code,
            0);
  unsetenv("SOURCE_DATE_EPOCH");
  const auto m = nlohmann::json::parse(testutil::slurp(dir / "s" / "manifest.json"));
  EXPECT_EQ(m["schema"], cli::kManifestSchema);
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["jobs"], 1);
  EXPECT_EQ(m["timestamp"], "1970-01-02T00:00:00Z");
  EXPECT_EQ(m["parameters"]["policy"], "random");
  EXPECT_EQ(m["outputs"].size(), 3u);
  EXPECT_TRUE(m["config_path"].is_null());
  EXPECT_TRUE(m.contains("tool_version"));
}

TEST(Cli, ConfigFileSections) {
  testutil::TempDir dir("cli-config");
  write_file(dir / "run.ini", "[synth]\npatients=4\nhours=6\nseed=21\n");
  const auto r = run_cli({"--config", (dir / "run.ini").string(), "synth", "--out", (dir / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t n = 0;
  for (const auto& f : fs::directory_iterator(dir / "s" / "events")) n += f.is_regular_file();
  EXPECT_EQ(n, 4u);
  const auto m = nlohmann::json::parse(testutil::slurp(dir / "s" / "manifest.json"));
  EXPECT_EQ(m["seed"], 21);
  EXPECT_EQ(m["config_path"], (dir / "run.ini").string());
  // Command line wins over the file.
  ASSERT_EQ(run_cli({"--config", (dir / "run.ini").string(), "synth", "--patients", "2", "--out", (dir / "t").string()}).code, 0);
  n = 0;
  for (const auto& f : fs::directory_iterator(dir / "t" / "events")) n += f.is_regular_file();
  EXPECT_EQ(n, 2u);
  EXPECT_EQ(run_cli({"--config", (dir / "missing.ini").string(), "synth", "--out", (dir / "u").string()}).code, 2);
}

TEST(Cli, IngestOutputsAndMissingInput) {
  testutil::TempDir dir("cli-ingest");
  small_pipeline(dir.path());
  for (const char* f : {"episodes.csv", "episodes_train.csv", "episodes_val.csv", "episodes_test.csv",
                        "transitions_train.csv", "transitions_val.csv", "transitions_test.csv", "ingest_stats.json",
                        "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "ingest" / f)) << f;
  }
  const auto stats = nlohmann::json::parse(testutil::slurp(dir / "ingest" / "ingest_stats.json"));
  EXPECT_EQ(stats["episodes"], 20);
  EXPECT_EQ(stats["split"]["train"], 14);
  EXPECT_EQ(stats["split"]["val"], 4);
  EXPECT_EQ(stats["split"]["test"], 2);
  EXPECT_EQ(stats["transitions"]["train"], 14 * 23);
  EXPECT_EQ(run_cli({"ingest", "--seed", "1", "--in", (dir / "nope").string(), "--out", (dir / "x").string()}).code, 3);
}

TEST(Cli, TrainZeroStepsEqualsInitialization) {
  testutil::TempDir dir("cli-train0");
  small_pipeline(dir.path());
  const auto r = run_cli({"train", "--seed", "4", "--in", (dir / "ingest").string(), "--steps", "0", "--val-episodes", "0",
                      "--out", (dir / "model").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint(dir / "model" / "model.ckpt");
  const auto init = QParams::initialize(QNetShape{}, derive_seed(4, 0));
  EXPECT_TRUE(bitwise_equal(ck.model.params.weights, init.weights));
  const auto tf = read_transitions(testutil::slurp(dir / "ingest" / "transitions_train.csv"));
  EXPECT_TRUE(ck.model.normalizer == Normalizer::fit(tf.transitions));
  EXPECT_EQ(ck.metadata.at("selected_step"), "0");
  EXPECT_EQ(ck.metadata.at("seed"), "4");
  EXPECT_TRUE(fs::exists(dir / "model" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "model" / "manifest.json"));
}

TEST(Cli, TrainMissingInputExitsThree) {
  testutil::TempDir dir("cli-train-missing");
  EXPECT_EQ(run_cli({"train", "--seed", "1", "--in", (dir / "nothing").string(), "--out", (dir / "m").string()}).code, 3);
}

TEST(Cli, TrainDivergenceExitsFour) {
  testutil::TempDir dir("cli-diverge");
  std::vector<Transition> ts;
  for (int i = 0; i < 40; ++i) {
    Transition t;
    t.state = Eigen::VectorXd::Constant(19, i % 5);
    t.action = i % kNumActions;
    t.reward = 1e200;
    t.admission_id = "D";
    t.hour = i;
    ts.push_back(t);
  }
  fs::create_directories(dir / "in");
  write_file(dir / "in" / "transitions_train.csv", write_transitions(ts, Normalizer::identity(19)));
  write_file(dir / "in" / "transitions_val.csv", write_transitions(ts, Normalizer::identity(19)));
  const auto r = run_cli({"train", "--seed", "1", "--in", (dir / "in").string(), "--steps", "50", "--val-episodes", "0",
                      "--loss", "squared", "--out", (dir / "m").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_TRUE(fs::exists(dir / "m" / "model.ckpt"));
  const auto ck = load_checkpoint(dir / "m" / "model.ckpt");
  EXPECT_TRUE(ck.metadata.contains("diverged_at_step"));
}

TEST(Cli, EvaluateWithoutCheckpointExitsThree) {
  testutil::TempDir dir("cli-eval-missing");
  small_pipeline(dir.path());
  const auto r = run_cli({"evaluate", "--seed", "1", "--model", (dir / "none.ckpt").string(), "--episodes",
                      (dir / "ingest" / "episodes_test.csv").string(), "--out", (dir / "report").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(r.err.empty());
  write_file(dir / "bad.ckpt", "MDQN garbage");
  EXPECT_EQ(run_cli({"evaluate", "--seed", "1", "--model", (dir / "bad.ckpt").string(), "--episodes",
                 (dir / "ingest" / "episodes_test.csv").string(), "--out", (dir / "report").string()})
                .code,
            3);
}

TEST(Cli, EvaluateWritesReportAndSimulation) {
  testutil::TempDir dir("cli-eval");
  small_pipeline(dir.path());
  const auto ckpt = fixed_checkpoint(dir.path());
  const auto r = run_cli({"evaluate", "--seed", "6", "--model", ckpt.string(), "--episodes",
                      (dir / "ingest" / "episodes_test.csv").string(), "--sim-episodes", "5", "--horizon", "12",
                      "--json", "--out", (dir / "report").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary["timesteps"], 2 * 24);
  for (const char* f : {"per_timestep.csv", "actions.csv", "joint_histogram.csv", "withhold_histogram.csv",
                        "dose_intervals.csv", "summary.csv", "simulation.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "report" / f)) << f;
  }
  const auto sim = nlohmann::json::parse(testutil::slurp(dir / "report" / "simulation.json"));
  EXPECT_EQ(sim["schema"], "morphdose-simulation v1");
  EXPECT_EQ(sim["gamma"], 0.99);
  EXPECT_EQ(sim["policies"]["withhold"]["doses_per_hour"]["mean"], 0.0);
  EXPECT_NO_THROW((void)import_report(ReportFormat::Csv, dir / "report"));

  ASSERT_EQ(run_cli({"evaluate", "--seed", "6", "--model", ckpt.string(), "--episodes",
                 (dir / "ingest" / "episodes_test.csv").string(), "--sim-episodes", "0", "--format", "jsonl", "--out",
                 (dir / "jl").string()})
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir / "jl" / "report.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "jl" / "simulation.json"));
}

TEST(Cli, RecommendMatchesGolden) {
  testutil::TempDir dir("cli-recommend");
  const auto ckpt = fixed_checkpoint(dir.path());
  const auto r = run_cli({"recommend", "--model", ckpt.string(), "--state", kState});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, testutil::slurp(testutil::data_path("golden/recommend.txt")));

  const auto j = run_cli({"recommend", "--model", ckpt.string(), "--state", kState, "--json"});
  ASSERT_EQ(j.code, 0);
  const auto doc = nlohmann::json::parse(j.out);
  EXPECT_EQ(doc["q_values"].size(), 14u);
  const auto ck = load_checkpoint(ckpt);
  Eigen::VectorXd s(19);
  s.setZero();
  s.head(3) << 7, 96, 15;
  const Eigen::VectorXd q = ck.model.q_values(s);
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < q.size(); ++a)
    if (q[a] > q[best]) best = a;
  EXPECT_EQ(doc["action"], best);
  for (int a = 0; a < 14; ++a) EXPECT_EQ(doc["q_values"][a]["q"].get<double>(), q[a]);
}

TEST(Cli, RecommendRejectsBadStates) {
  testutil::TempDir dir("cli-recommend-bad");
  const auto ckpt = fixed_checkpoint(dir.path());
  EXPECT_EQ(run_cli({"recommend", "--model", ckpt.string(), "--state", "7,96,15,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0"}).code, 2);
  EXPECT_EQ(run_cli({"recommend", "--model", ckpt.string(), "--state", kState + ",0"}).code, 2);
  EXPECT_EQ(run_cli({"recommend", "--model", ckpt.string(), "--state", "7,x,15,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0"}).code, 2);
  EXPECT_EQ(run_cli({"recommend", "--model", (dir / "missing.ckpt").string(), "--state", kState}).code, 3);
}
