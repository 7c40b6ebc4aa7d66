// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Run from the build tree (ctest does this).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "biax/ablation.hpp"
#include "biax/cli.hpp"
#include "biax/config.hpp"
#include "biax/gradcheck.hpp"
#include "biax/rf_planner.hpp"
#include "biax/signal.hpp"
#include "metric_oracle.hpp"
#include "test_util.hpp"

using namespace biax;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int run_cli(const std::string& args, std::string* output) {
  const fs::path log = fs::temp_directory_path() / "biax_acceptance_cli.txt";
  const std::string cmd = std::string(BIAX_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) *output = io::slurp(log);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path work_dir() {
  static const fs::path d = [] {
    const auto p = fs::current_path() / "acceptance_work";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

/// Desk config with output and cohort under the work directory; the cohort
/// is synthesized once.
RunConfig desk_config() {
  static bool synthesized = false;
  RunConfig cfg = load_run_config(fs::path(BIAX_CONFIGS) / "desk.json");
  cfg.output_dir = work_dir() / "desk";
  cfg.manifest = work_dir() / "cohort" / "manifest.csv";
  json& src = cfg.source;
  src["output_dir"] = cfg.output_dir.string();
  src["cohort"]["manifest"] = cfg.manifest.string();
  if (!synthesized) {
    std::ostringstream sink;
    cli::cmd_synth(cfg, sink);
    synthesized = true;
  }
  return cfg;
}

fs::path write_desk_config(const std::string& name) {
  const RunConfig cfg = desk_config();
  const fs::path p = work_dir() / name;
  io::dump(p, cfg.source.dump(2));
  return p;
}

// ---------------------------------------------------------------------------

Verdict c1_receptive_field() {
  const fs::path stack = fs::path(BIAX_CONFIGS) / "stacks" / "30s.json";
  const auto t0 = Clock::now();
  std::string out;
  const int rc = run_cli("rf-calc " + stack.string(), &out);
  const double secs = seconds_since(t0);
  const bool ok = rc == 0 && out.find("r = 2970 samples") != std::string::npos &&
                  out.find("j = 2430, o = 12 tokens") != std::string::npos && secs < 1.0;
  const auto rep = rf::report(rf::ConvStackSpec::from_lists({10, 5, 5, 5, 5, 3, 3}, {5, 3, 3, 3, 2, 3, 3}, 30000, 100));
  return {ok && rep.field.back() == 2970 && rep.jump.back() == 2430 && rep.tokens.back() == 12,
          fmt("r=%llu j=%llu o=%zu, exit %d, %.3f s", static_cast<unsigned long long>(rep.field.back()),
              static_cast<unsigned long long>(rep.jump.back()), rep.tokens.back(), rc, secs)};
}

Verdict c2_tokenizer_planner() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::size_t agree = 0;
  for (int t = 0; t < 50; ++t) {
    ModelConfig mc;
    mc.channels = 2;
    mc.dim = 2;
    mc.heads = 1;
    mc.dropout = 0.0;
    mc.conv_stack.clear();
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) mc.conv_stack.push_back({1 + rng.below(8), 1 + rng.below(4), rng.below(3)});
    // Grow L until every layer is feasible, then add slack.
    std::size_t L = 1;
    for (;; ++L) {
      mc.input_len = L;
      try {
        rf::layer_outputs(mc.stack_spec());
        break;
      } catch (const ConfigError&) {
      }
    }
    mc.input_len = L + rng.below(200);
    const Biaxialformer m(mc);
    NoGradGuard ng;
    const Tensor tok = m.tokenize(test::random_input(rng, 1, 2, mc.input_len));
    agree += tok.dim(2) == rf::layer_outputs(mc.stack_spec()).back();
  }
  const double secs = seconds_since(t0);
  return {agree == 50 && secs < 60.0, fmt("%zu/50 stacks agree, %.2f s", agree, secs)};
}

Verdict c3_gradients() {
  const auto t0 = Clock::now();
  ModelConfig mc = test::desk_model(3, 8, 2);
  mc.ff_mult = 4;
  mc.n_temporal_layers = mc.n_spatial_layers = 1;
  Biaxialformer m(mc);
  Rng rng(3);
  const Tensor x = test::random_input(rng, 2, 3, 600);
  const std::vector<int> y{0, 1};
  auto loss = [&] { return bce_loss(select_last(m.forward(x), 1), y); };
  GradCheckOptions opt;  // h = 1e-5, 1e-3 relative, 1e-6 absolute, every entry
  const auto rep = check_gradients(loss, m.params().items(), opt);
  const double secs = seconds_since(t0);
  std::string worst;
  if (!rep.ok()) {
    const auto& mm = rep.mismatches.front();
    worst = fmt("; first mismatch %s[%zu] analytic %.6g numeric %.6g", mm.param.c_str(), mm.index, mm.analytic, mm.numeric);
  }
  return {rep.ok() && secs < 300.0,
          fmt("%zu entries in %zu tensors, %zu mismatches, max abs err %.2e, %.1f s%s", rep.checked,
              m.params().items().size(), rep.mismatches.size(), rep.worst_abs_err, secs, worst.c_str())};
}

Verdict c4_shapes() {
  std::vector<std::string> bad;
  auto check_model = [&](const ModelConfig& mc, std::size_t B, const char* name) {
    const Biaxialformer m(mc);
    Rng rng(4);
    ForwardContext ctx;
    std::vector<Tensor> probe;
    ctx.attention_probe = &probe;
    ForwardTrace tr;
    NoGradGuard ng;
    const Tensor p = m.forward(test::random_input(rng, B, mc.channels, mc.input_len), ctx, &tr);
    const std::size_t C = mc.channels, T = mc.tokens(), D = mc.dim;
    if (p.shape() != Shape{B, 2}) bad.push_back(std::string(name) + " output " + shape_str(p.shape()));
    for (std::size_t b = 0; b < B; ++b)
      if (std::abs(p[2 * b] + p[2 * b + 1] - 1.0) > 1e-9) bad.push_back(std::string(name) + " output row sum");
    if (tr.embedded.shape() != Shape{B, C + 1, T + 1, D}) bad.push_back(std::string(name) + " embed " + shape_str(tr.embedded.shape()));
    std::size_t rows = 0;
    for (const auto& a : probe) {
      const std::size_t n = a.dim(a.rank() - 1);
      for (std::size_t r = 0; r < a.numel() / n; ++r, ++rows) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += a[r * n + i];
        if (std::abs(s - 1.0) > 1e-9) {
          bad.push_back(std::string(name) + " attention row sum");
          return rows;
        }
      }
    }
    return rows;
  };
  const std::size_t desk_rows = check_model(test::desk_model(), 3, "desk");
  ModelConfig full;  // 18 channels, 30000 samples, T = 12; narrow width keeps it cheap
  full.dim = 8;
  full.heads = 2;
  full.dropout = 0.0;
  const std::size_t full_rows = check_model(full, 2, "full-stack");
  const bool ok = bad.empty() && desk_rows > 0 && full_rows > 0;
  return {ok, ok ? fmt("B x 2 outputs, B x (C+1) x (T+1) x D embeddings (full stack: 2 x 19 x 13 x 8), %zu attention rows",
                       desk_rows + full_rows)
                 : bad.front()};
}

Verdict c5_metric_oracle() {
  Rng rng(5);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto s = test::random_score_set(rng, 200, t % 2 == 0);
    worst = std::max({worst, std::abs(score_metric(s, 0.05) - test::oracle_sm(s, 0.05)),
                      std::abs(f1(s) - test::oracle_f1(s)), std::abs(auroc(s) - test::oracle_auroc(s)),
                      std::abs(auprc(s) - test::oracle_auprc(s))});
  }
  return {worst <= 1e-12, fmt("100 sets of n=200, max deviation %.3g", worst)};
}

// Shared by criteria 6-8: per seed, the full model and both single-branch
// variants trained on the desk cohort's training groups.
struct SeedRuns {
  std::vector<std::uint64_t> seeds;
  std::vector<double> full_k1, full_k7, temporal, spatial;
  double train_seconds = 0;  // one full-model training
};

const std::vector<PatientRecord>& desk_cohort() {
  static const auto c = [] {
    const RunConfig cfg = desk_config();
    return load_cohort(cfg.manifest, cfg.pipeline, cfg.model_config().input_len, cfg.electrodes);
  }();
  return c;
}

const SeedRuns& seed_runs() {
  static const SeedRuns runs = [] {
    SeedRuns r;
    const RunConfig cfg = desk_config();
    AblationContext ctx{cfg, cfg.held_out_group, {}};
    ctx.hooks.warn = nullptr;
    r.seeds = cfg.ablation.seeds;
    const int h = ctx.horizon();
    const auto t0 = Clock::now();
    const auto full = ctx.per_seed(cfg.model_config(), desk_cohort(), [&](const Biaxialformer& m, const auto& test) {
      return std::vector<MetricRow>{evaluate(m, test, cfg.eval_options(1, h), "k1"),
                                    evaluate(m, test, cfg.eval_options(7, h), "k7")};
    });
    r.train_seconds = seconds_since(t0) / static_cast<double>(r.seeds.size());
    for (const auto& rows : full) {
      r.full_k1.push_back(rows[0].auroc);
      r.full_k7.push_back(rows[1].auroc);
    }
    for (auto mode : {BranchMode::temporal_only, BranchMode::spatial_only}) {
      ModelConfig mc = cfg.model_config();
      mc.branches = mode;
      const auto rows = ctx.per_seed(mc, desk_cohort(), [&](const Biaxialformer& m, const auto& test) {
        return std::vector<MetricRow>{evaluate(m, test, cfg.eval_options(1, h), "")};
      });
      for (const auto& rr : rows) (mode == BranchMode::temporal_only ? r.temporal : r.spatial).push_back(rr[0].auroc);
    }
    return r;
  }();
  return runs;
}

Verdict c6_separability() {
  const RunConfig cfg = desk_config();
  const auto t0 = Clock::now();
  const FoldResult fold = grouped_eval(cfg.model_config(), cfg.train_config(), desk_cohort(), cfg.held_out_group,
                                       cfg.eval_options(1, 0), TrainHooks{{}, {}, nullptr});
  const double secs = seconds_since(t0);
  const auto [train, test] = split_by_group(desk_cohort(), cfg.held_out_group);
  const auto bl = MeanFeatureBaseline::fit(train);
  const MetricRow base = summarize(score_patients(bl.scorer(), test, cfg.eval_options(1, 0)), "baseline", 0.05);
  const bool ok = fold.row.auroc >= 0.90 && fold.row.sm >= 0.5 && base.auroc <= 0.6 &&
                  cfg.train.iterations <= 2000 && secs <= 600.0;
  return {ok, fmt("held-out %s (%zu patients): AUROC %.4f, SM %.4f; mean-feature baseline AUROC %.4f; %zu iterations, %.1f s",
                  cfg.held_out_group.c_str(), fold.row.n, fold.row.auroc, fold.row.sm, base.auroc, cfg.train.iterations,
                  secs)};
}

Verdict c7_ablation_direction() {
  const SeedRuns& r = seed_runs();
  bool ok = true;
  std::string per;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    ok = ok && r.full_k1[i] >= r.temporal[i] - 0.02 && r.full_k1[i] >= r.spatial[i] - 0.02;
    per += fmt("%sseed %llu: full %.3f, temporal %.3f, spatial %.3f", i ? "; " : "",
               static_cast<unsigned long long>(r.seeds[i]), r.full_k1[i], r.temporal[i], r.spatial[i]);
  }
  // The condition-swap arm through the CLI entry point.
  RunConfig cfg = desk_config();
  cfg.output_dir = work_dir() / "ablate";
  std::ostringstream sink;
  cli::cmd_ablate(cfg, "condition_swap", sink, nullptr);
  const std::string table = io::slurp(cfg.output_dir / "ablation_condition_swap.txt");
  const std::string jsonl = io::slurp(cfg.output_dir / "ablation_condition_swap.jsonl");
  const bool rows = table.find("Spatial weighted by Temporal") != std::string::npos &&
                    table.find("Temporal weighted by Spatial") != std::string::npos &&
                    std::count(jsonl.begin(), jsonl.end(), '\n') == 2;
  return {ok && rows, per + (rows ? "; condition-swap rows emitted" : "; condition-swap rows missing")};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict c8_mode_aggregation() {
  const SeedRuns& r = seed_runs();
  const double m1 = median(r.full_k1), m7 = median(r.full_k7);
  return {m7 >= m1 - 0.01, fmt("median AUROC over %zu seeds: k=7 %.4f, k=1 %.4f", r.seeds.size(), m7, m1)};
}

Verdict c9_golden() {
  const auto in = read_recording(std::string(BIAX_TEST_DATA) + "/pipeline_input.biaxrec");
  const auto expected = read_recording(std::string(BIAX_TEST_DATA) + "/pipeline_expected.biaxrec");
  const auto out = preprocess(in);
  std::size_t diffs = 0;
  const bool shape = out.data.channels == expected.data.channels && out.data.length == expected.data.length;
  if (shape)
    for (std::size_t i = 0; i < out.data.samples.size(); ++i) {
      const float a = static_cast<float>(out.data.samples[i]), b = static_cast<float>(expected.data.samples[i]);
      diffs += std::memcmp(&a, &b, sizeof a) != 0;
    }
  return {shape && diffs == 0 && in.data.channels == 19 && out.data.channels == 18,
          fmt("%zu electrodes -> %zu bipolar channels, %zu samples, %zu float32 mismatches", in.data.channels,
              out.data.channels, out.data.samples.size(), diffs)};
}

Verdict c10_determinism() {
  const fs::path config = write_desk_config("determinism.json");
  const fs::path a = work_dir() / "run_a", b = work_dir() / "run_b";
  std::string log;
  if (run_cli("train " + config.string() + " --out " + a.string(), &log) != 0) return {false, "first run failed: " + log};
  if (run_cli("train " + config.string() + " --out " + b.string(), &log) != 0) return {false, "second run failed: " + log};
  std::size_t files = 0, differing = 0, checkpoints = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    checkpoints += e.path().extension() == ".biaxckp";
    if (!fs::exists(b / rel) || io::slurp(e.path()) != io::slurp(b / rel)) ++differing;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
  const bool has_metrics = fs::exists(a / "metrics.jsonl") && fs::file_size(a / "metrics.jsonl") > 0;
  return {differing == 0 && files == files_b && checkpoints > 0 && has_metrics,
          fmt("%zu files (%zu checkpoints, metrics.jsonl, train_log.jsonl) compared, %zu differ", files, checkpoints,
              differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"receptive-field exactness", c1_receptive_field},
      {"tokenizer/planner agreement", c2_tokenizer_planner},
      {"gradient correctness", c3_gradients},
      {"shape/normalization", c4_shapes},
      {"metric oracle equivalence", c5_metric_oracle},
      {"synthetic separability", c6_separability},
      {"ablation direction", c7_ablation_direction},
      {"mode aggregation", c8_mode_aggregation},
      {"pipeline golden vectors", c9_golden},
      {"determinism", c10_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " (" << criteria[i].first << "): " << r.detail
              << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion/criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
