#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "biax/cli.hpp"
#include "biax/config.hpp"
#include "test_util.hpp"

using namespace biax;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = BIAX_CONFIGS;

json load_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const auto log = test::scratch("cli_out") / "out.txt";
  const std::string cmd = std::string(BIAX_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) *output = io::slurp(log);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string expect_config_error(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for " << j.dump();
  return {};
}

}  // namespace

TEST(Config, DeskConfigParses) {
  const auto c = load_run_config(kConfigs / "desk.json");
  const auto mc = c.model_config();
  EXPECT_EQ(mc.channels, 4u);
  EXPECT_EQ(mc.input_len, 600u);
  EXPECT_EQ(mc.tokens(), 5u);
  EXPECT_EQ(mc.dim, 16u);
  EXPECT_EQ(c.held_out_group, "B");
  EXPECT_EQ(c.synth.base.channels, 5u);
  EXPECT_EQ(c.eval.horizons, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.ablation.receptive_fields.size(), 4u);
  EXPECT_TRUE(c.output_dir.is_absolute());
  EXPECT_EQ(fs::weakly_canonical(c.manifest), fs::weakly_canonical(kConfigs / ".." / "runs" / "desk-cohort" / "manifest.csv"));
}

TEST(Config, FullConfigParses) {
  const auto c = load_run_config(kConfigs / "full.json");
  const auto mc = c.model_config();
  EXPECT_EQ(mc.channels, 18u);
  EXPECT_EQ(mc.input_len, 30000u);
  EXPECT_EQ(mc.tokens(), 12u);
  EXPECT_EQ(mc.dim, 768u);
  EXPECT_EQ(mc.heads, 8u);
  EXPECT_EQ(c.eval.horizons, (std::vector<int>{12, 24, 48, 72}));
  EXPECT_EQ(c.ablation.receptive_fields.size(), 5u);
}

TEST(Config, DefaultsWhenEmpty) {
  const auto c = parse_run_config(json::object());
  EXPECT_EQ(c.model_config().channels, 18u);
  EXPECT_EQ(c.model_config().input_len, 30000u);
  EXPECT_EQ(c.train.batch_size, 10u);
  EXPECT_EQ(c.eval.fpr_cap, 0.05);
}

TEST(Config, UnknownKeysRejectedWithPath) {
  EXPECT_NE(expect_config_error({{"bogus", 1}}).find("config: unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(expect_config_error({{"model", {{"layers", 2}}}}).find("config.model: unknown key 'layers'"), std::string::npos);
  EXPECT_NE(expect_config_error({{"train", {{"learning_rate", 1}}}}).find("config.train"), std::string::npos);
}

TEST(Config, InvalidValuesRejected) {
  expect_config_error({{"model", {{"dim", 10}, {"heads", 3}}}});
  expect_config_error({{"model", {{"branches", "neither"}}}});
  expect_config_error({{"model", {{"kernels", {3, 3}}, {"strides", {1}}}}});
  expect_config_error({{"pipeline", {{"bandpass", {0.5, 60}}}}});
  expect_config_error({{"pipeline", {{"montage", "bogus"}}}});
  expect_config_error({{"window", {{"minutes", 0.1}}}});  // 600 samples: full stack infeasible
  expect_config_error({{"train", {{"lr", -1}}}});
  expect_config_error({{"eval", {{"segments_per_patient", {0}}}}});
  expect_config_error({{"seed", "one"}});
}

TEST(Config, PathsResolveAgainstConfigDir) {
  const auto c = parse_run_config({{"output_dir", "out"}, {"cohort", {{"manifest", "/abs/m.csv"}}}}, "/base");
  EXPECT_EQ(c.output_dir, fs::path("/base/out"));
  EXPECT_EQ(c.manifest, fs::path("/abs/m.csv"));
}

TEST(Config, SeedDerivation) {
  auto c = parse_run_config({{"seed", 5}});
  EXPECT_EQ(c.model_config().seed, 5u);
  EXPECT_EQ(c.synth.seed, 5u);
  c.set_seed(9);
  EXPECT_EQ(c.model_config().seed, 9u);
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_NE(c.train_config().seed, 9u);
}

TEST(RfCalc, FullStackTable) {
  std::ostringstream os;
  cli::cmd_rf_calc(cli::parse_stack(load_json(kConfigs / "stacks" / "30s.json")), os);
  EXPECT_NE(os.str().find("r = 2970 samples (29.70 s at 100 Hz), j = 2430, o = 12 tokens"), std::string::npos) << os.str();
  EXPECT_NE(os.str().find("matches reference"), std::string::npos);
}

TEST(RfCalc, FifteenSecondColumnNotesMismatch) {
  std::ostringstream os;
  cli::cmd_rf_calc(cli::parse_stack(load_json(kConfigs / "stacks" / "15s.json")), os);
  EXPECT_NE(os.str().find("r = 2070"), std::string::npos) << os.str();
  EXPECT_NE(os.str().find("computed values differ"), std::string::npos);
}

TEST(RfCalc, StackFileValidation) {
  EXPECT_THROW(cli::parse_stack(json{{"kernels", {3}}, {"strides", {1}}}), ConfigError);
  EXPECT_THROW(cli::parse_stack(json{{"kernels", {3}}, {"strides", {1, 1}}, {"input_len", 9}}), ConfigError);
  EXPECT_THROW(cli::parse_stack(json{{"kernels", {3}}, {"strides", {1}}, {"input_len", 9}, {"extra", 0}}), ConfigError);
  const auto s = cli::parse_stack(json{{"kernels", {3}}, {"strides", {2}}, {"paddings", {1}}, {"input_len", 9}});
  EXPECT_EQ(s.layers.at(0).padding, 1u);
  EXPECT_EQ(s.fs, 100.0);
}

TEST(Cli, ExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli("rf-calc " + (kConfigs / "stacks" / "desk.json").string(), &out), 0) << out;
  EXPECT_NE(out.find("o = 5 tokens"), std::string::npos) << out;
  EXPECT_EQ(run_cli("", &out), 2);
  EXPECT_EQ(run_cli("frobnicate", &out), 2);
  EXPECT_EQ(run_cli("ablate " + (kConfigs / "desk.json").string() + " no_such_arm", &out), 2);
  EXPECT_EQ(run_cli("train /nonexistent/config.json", &out), 2);

  const auto dir = test::scratch("cli_codes");
  io::dump(dir / "bad.json", R"({"model": {"dim": 16, "heads": 2, "typo": 1}})");
  EXPECT_EQ(run_cli("train " + (dir / "bad.json").string(), &out), 2);
  EXPECT_NE(out.find("config.model: unknown key 'typo'"), std::string::npos) << out;

  io::dump(dir / "nomanifest.json", R"({"cohort": {"manifest": "missing/manifest.csv"}})");
  EXPECT_EQ(run_cli("eval " + (dir / "nomanifest.json").string(), &out), 2);
  EXPECT_NE(out.find("manifest not found"), std::string::npos) << out;

  // Infeasible stack for its input length is a configuration error.
  io::dump(dir / "short.json", R"({"kernels": [10, 5, 5, 5, 5, 3, 3], "strides": [5, 3, 3, 3, 2, 3, 3], "input_len": 600})");
  EXPECT_EQ(run_cli("rf-calc " + (dir / "short.json").string(), &out), 2);
  EXPECT_NE(out.find("layer 5"), std::string::npos) << out;
}

TEST(Cli, SynthThenPreprocess) {
  const auto dir = test::scratch("cli_synth");
  json j = load_json(kConfigs / "desk.json");
  j["output_dir"] = (dir / "out").string();
  j["cohort"]["manifest"] = (dir / "cohort" / "manifest.csv").string();
  j["synth"]["patients"] = 4;
  j["synth"]["hour_seconds"] = 10;
  const auto cfg = parse_run_config(j);
  std::ostringstream os;
  EXPECT_EQ(cli::cmd_synth(cfg, os), 0);
  EXPECT_TRUE(fs::exists(dir / "cohort" / "manifest.csv"));
  EXPECT_EQ(read_manifest(dir / "cohort" / "manifest.csv").size(), 4u);
  EXPECT_EQ(cli::cmd_preprocess(cfg, os), 0);
  const auto rows = read_manifest(dir / "out" / "preprocessed" / "manifest.csv");
  const auto rec = read_recording(dir / "out" / "preprocessed" / rows[0].paths[0]);
  EXPECT_EQ(rec.data.channels, 4u);
  EXPECT_EQ(rec.fs, 100.0);
  EXPECT_EQ(rec.data.length, 1000u);
}
