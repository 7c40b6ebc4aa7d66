#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "biax/config.hpp"
#include "biax/dataset.hpp"
#include "biax/evaluation.hpp"
#include "biax/metrics.hpp"
#include "biax/rf_planner.hpp"

namespace biax {

inline const std::vector<std::string>& ablation_arms() {
  static const std::vector<std::string> arms{"temporal_only", "spatial_only",  "condition_swap",
                                             "window_size",   "segment_count", "receptive_field"};
  return arms;
}

struct AblationRow {
  MetricRow metrics;  // mean over seeds
  std::vector<MetricRow> per_seed;
  std::string note;   // set instead of metrics when the variant could not run
};

struct AblationTable {
  AblationTable(std::string arm_, std::string title_, std::string first_col_, std::string sm_header_ = "SM")
      : arm(std::move(arm_)), title(std::move(title_)), first_col(std::move(first_col_)), sm_header(std::move(sm_header_)) {}

  std::string arm;
  std::string title;
  std::string first_col;
  std::string sm_header = "SM";
  std::vector<AblationRow> rows;
};

inline void render_ablation(std::ostream& os, const AblationTable& t) {
  os << t.title << "\n";
  std::vector<MetricRow> ok;
  for (const auto& r : t.rows)
    if (r.note.empty()) ok.push_back(r.metrics);
  render_table(os, t.first_col, ok, t.sm_header);
  for (const auto& r : t.rows)
    if (!r.note.empty()) os << r.metrics.label << ": " << r.note << "\n";
}

/// Shared state for every arm: the run config, the cohort cut at the
/// configured window and the fold used for all variants.
struct AblationContext {
  RunConfig cfg;
  std::string held_out;
  TrainHooks hooks;

  std::vector<PatientRecord> cohort(std::size_t window_len) const {
    return load_cohort(cfg.manifest, cfg.pipeline, window_len, cfg.electrodes);
  }

  int horizon() const { return *std::max_element(cfg.eval.horizons.begin(), cfg.eval.horizons.end()); }

  // Trains one model per seed on the fold's training groups and hands each
  // to `score`, which returns one row per requested evaluation.
  std::vector<std::vector<MetricRow>> per_seed(
      const ModelConfig& base, const std::vector<PatientRecord>& patients,
      const std::function<std::vector<MetricRow>(const Biaxialformer&, const std::vector<PatientRecord>&)>& score) const {
    auto [train, test] = split_by_group(patients, held_out);
    std::vector<std::vector<MetricRow>> out;
    for (std::uint64_t seed : cfg.ablation.seeds) {
      RunConfig c = cfg;
      c.set_seed(seed);
      ModelConfig mc = base;
      mc.seed = c.model_config().seed;
      const TrainState st = train_loop(mc, c.train_config(), train, hooks);
      out.push_back(score(st.model, test));
    }
    return out;
  }
};

inline std::string default_held_out(const RunConfig& cfg, const std::vector<PatientRecord>& patients) {
  if (!cfg.held_out_group.empty()) return cfg.held_out_group;
  const auto g = group_ids(patients);
  if (g.empty()) throw ConfigError("ablation: empty cohort");
  return g.back();
}

namespace detail {

inline AblationRow collect(const std::vector<std::vector<MetricRow>>& seeds, std::size_t i, const std::string& label) {
  AblationRow r;
  for (const auto& s : seeds) r.per_seed.push_back(s.at(i));
  r.metrics = mean_row(r.per_seed, label);
  r.metrics.n = r.per_seed.front().n;
  return r;
}

inline std::string hours_label(int h) { return std::to_string(h) + "h"; }

}  // namespace detail

/// Single-branch model evaluated at every horizon, plus the full model at
/// the longest horizon for reference.
inline AblationTable ablate_branch(const AblationContext& ctx, BranchMode mode) {
  const bool temporal = mode == BranchMode::temporal_only;
  AblationTable t{temporal ? "temporal_only" : "spatial_only",
                  temporal ? "Intra-channel (temporal) block only" : "Inter-channel (spatial) block only", "Window"};
  const auto patients = ctx.cohort(ctx.cfg.model_config().input_len);
  auto eval_horizons = [&](const Biaxialformer& m, const std::vector<PatientRecord>& test) {
    std::vector<MetricRow> rows;
    for (int h : ctx.cfg.eval.horizons) rows.push_back(evaluate(m, test, ctx.cfg.eval_options(1, h), detail::hours_label(h)));
    return rows;
  };
  ModelConfig mc = ctx.cfg.model_config();
  mc.branches = mode;
  const auto single = ctx.per_seed(mc, patients, eval_horizons);
  for (std::size_t i = 0; i < ctx.cfg.eval.horizons.size(); ++i)
    t.rows.push_back(detail::collect(single, i, detail::hours_label(ctx.cfg.eval.horizons[i])));
  const int hmax = ctx.horizon();
  const auto full = ctx.per_seed(ctx.cfg.model_config(), patients, [&](const Biaxialformer& m, const auto& test) {
    return std::vector<MetricRow>{evaluate(m, test, ctx.cfg.eval_options(1, hmax), "")};
  });
  t.rows.push_back(detail::collect(full, 0, "full model, " + detail::hours_label(hmax)));
  return t;
}

/// Decoder values from the temporal branch versus the spatial branch.
inline AblationTable ablate_condition_swap(const AblationContext& ctx) {
  const int hmax = ctx.horizon();
  AblationTable t{"condition_swap", "Weighting from temporal and spatial encoders", "Conditioning",
                  "SM (" + detail::hours_label(hmax) + ")"};
  const auto patients = ctx.cohort(ctx.cfg.model_config().input_len);
  auto score = [&](const Biaxialformer& m, const std::vector<PatientRecord>& test) {
    return std::vector<MetricRow>{evaluate(m, test, ctx.cfg.eval_options(1, hmax), "")};
  };
  ModelConfig swapped = ctx.cfg.model_config();
  swapped.decoder_value_source = ValueSource::temporal;
  ModelConfig original = ctx.cfg.model_config();
  original.decoder_value_source = ValueSource::spatial;
  t.rows.push_back(detail::collect(ctx.per_seed(swapped, patients, score), 0, "Spatial weighted by Temporal"));
  t.rows.push_back(detail::collect(ctx.per_seed(original, patients, score), 0, "Temporal weighted by Spatial"));
  return t;
}

/// Retrains with n-"minute" windows for each configured n.
inline AblationTable ablate_window_size(const AblationContext& ctx) {
  const int hmax = ctx.horizon();
  AblationTable t{"window_size", "Window size", "Window Size (in mins)", "SM (" + detail::hours_label(hmax) + ")"};
  for (double n : ctx.cfg.ablation.window_minutes) {
    char label[32];
    std::snprintf(label, sizeof label, "%g", n);
    RunConfig c = ctx.cfg;
    c.window.minutes = n;
    AblationRow row;
    row.metrics.label = label;
    try {
      const ModelConfig mc = c.model_config();
      mc.validate();
      const auto patients = ctx.cohort(mc.input_len);
      const auto seeds = ctx.per_seed(mc, patients, [&](const Biaxialformer& m, const auto& test) {
        return std::vector<MetricRow>{evaluate(m, test, c.eval_options(1, hmax), label)};
      });
      row = detail::collect(seeds, 0, label);
    } catch (const ConfigError& e) {
      row.note = e.what();
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// One trained model per seed, evaluated with k segments per patient.
inline AblationTable ablate_segment_count(const AblationContext& ctx) {
  const int hmax = ctx.horizon();
  AblationTable t{"segment_count", "Segment variability (mode aggregation)", "No.Segments",
                  "SM (" + detail::hours_label(hmax) + ")"};
  const auto patients = ctx.cohort(ctx.cfg.model_config().input_len);
  const auto& ks = ctx.cfg.ablation.segment_counts;
  const auto seeds = ctx.per_seed(ctx.cfg.model_config(), patients, [&](const Biaxialformer& m, const auto& test) {
    std::vector<MetricRow> rows;
    for (std::size_t k : ks) rows.push_back(evaluate(m, test, ctx.cfg.eval_options(k, hmax), std::to_string(k)));
    return rows;
  });
  for (std::size_t i = 0; i < ks.size(); ++i) t.rows.push_back(detail::collect(seeds, i, std::to_string(ks[i])));
  return t;
}

/// Retrains with each configured conv stack; infeasible stacks are reported
/// with the offending layer instead of metrics.
inline AblationTable ablate_receptive_field(const AblationContext& ctx) {
  const int hmax = ctx.horizon();
  AblationTable t{"receptive_field", "Exploration of receptive field", "Stack", "SM (" + detail::hours_label(hmax) + ")"};
  if (ctx.cfg.ablation.receptive_fields.empty())
    throw ConfigError("ablation.receptive_fields: no stacks configured for the receptive_field arm");
  const ModelConfig base = ctx.cfg.model_config();
  const auto patients = ctx.cohort(base.input_len);
  for (const auto& ns : ctx.cfg.ablation.receptive_fields) {
    AblationRow row;
    row.metrics.label = ns.label;
    try {
      auto spec = rf::ConvStackSpec::from_lists(ns.kernels, ns.strides, base.input_len, ctx.cfg.pipeline.fs_out);
      const auto rep = rf::report(spec);
      char label[160];
      std::snprintf(label, sizeof label, "%s (r=%llu, j=%llu, o=%zu)", ns.label.c_str(),
                    static_cast<unsigned long long>(rep.field.back()), static_cast<unsigned long long>(rep.jump.back()),
                    rep.tokens.back());
      ModelConfig mc = base;
      mc.conv_stack = spec.layers;
      const auto seeds = ctx.per_seed(mc, patients, [&](const Biaxialformer& m, const auto& test) {
        return std::vector<MetricRow>{evaluate(m, test, ctx.cfg.eval_options(1, hmax), label)};
      });
      row = detail::collect(seeds, 0, label);
    } catch (const ConfigError& e) {
      row.note = e.what();
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline AblationTable run_ablation(const AblationContext& ctx, const std::string& arm) {
  if (arm == "temporal_only") return ablate_branch(ctx, BranchMode::temporal_only);
  if (arm == "spatial_only") return ablate_branch(ctx, BranchMode::spatial_only);
  if (arm == "condition_swap") return ablate_condition_swap(ctx);
  if (arm == "window_size") return ablate_window_size(ctx);
  if (arm == "segment_count") return ablate_segment_count(ctx);
  if (arm == "receptive_field") return ablate_receptive_field(ctx);
  throw ConfigError("unknown ablation arm '" + arm + "'");
}

}  // namespace biax
