#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "biax/ablation.hpp"
#include "biax/checkpoint.hpp"
#include "biax/config.hpp"
#include "biax/dataset.hpp"
#include "biax/evaluation.hpp"
#include "biax/metrics.hpp"
#include "biax/rf_planner.hpp"
#include "biax/training.hpp"

// Subcommand bodies. Each takes a parsed config and writes human-readable
// progress to `out`; files go under the config's output directory:
//
//   <output_dir>/manifest.csv          copy of the cohort manifest
//   <output_dir>/checkpoints/<group>/  step_NNNNNN.biaxckp, final.biaxckp
//   <output_dir>/train_log.jsonl       one record per optimisation step
//   <output_dir>/metrics.jsonl         one record per (fold, k, horizon)
//   <output_dir>/metrics.txt           rendered tables
//   <output_dir>/ablation_<arm>.{txt,jsonl}
namespace biax::cli {

namespace fs = std::filesystem;

inline void require_manifest(const RunConfig& cfg) {
  if (!fs::exists(cfg.manifest))
    throw ConfigError("cohort manifest not found: " + cfg.manifest.string() + " (run `biax synth` first)");
}

inline void write_text(const fs::path& p, const std::string& s) { io::dump(p, s); }

inline json row_json(const MetricRow& r) {
  return {{"label", r.label}, {"sm", r.sm}, {"f1", r.f1}, {"auroc", r.auroc}, {"auprc", r.auprc}, {"n", r.n}};
}

inline std::vector<PatientRecord> load_run_cohort(const RunConfig& cfg) {
  require_manifest(cfg);
  return load_cohort(cfg.manifest, cfg.pipeline, cfg.model_config().input_len, cfg.electrodes);
}

inline std::vector<std::string> folds(const RunConfig& cfg, const std::vector<PatientRecord>& patients) {
  if (!cfg.held_out_group.empty()) {
    split_by_group(patients, cfg.held_out_group);  // validates
    return {cfg.held_out_group};
  }
  return group_ids(patients);
}

inline json checkpoint_echo(const RunConfig& cfg) {
  return {{"config", cfg.source}, {"seed", cfg.seed}, {"model", model_config_json(cfg.model_config())}};
}

inline fs::path final_checkpoint(const RunConfig& cfg, const std::string& group) {
  return cfg.output_dir / "checkpoints" / group / "final.biaxckp";
}

// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const auto cohort = synth_cohort(cfg.synth);
  const auto dir = cfg.manifest.parent_path();
  const auto manifest = write_cohort(cohort, dir.empty() ? fs::path(".") : dir, cfg.manifest.filename().string());
  std::size_t poor = 0;
  for (const auto& [row, _] : cohort) poor += row.label == Outcome::poor;
  out << "wrote " << cohort.size() << " patients (" << poor << " poor, " << cohort.size() - poor << " good), "
      << cfg.synth.hours_per_patient << " recordings each, to " << manifest.string() << "\n";
  return 0;
}

/// Runs the preprocessing chain on every recording and stores the result as
/// RecordingFiles (bipolar channels at fs_out) with a matching manifest.
inline int cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  require_manifest(cfg);
  const auto rows = read_manifest(cfg.manifest);
  const auto dst = cfg.output_dir / "preprocessed";
  std::size_t files = 0;
  for (const auto& row : rows) {
    for (const auto& rel : row.paths) {
      auto rec = preprocess(read_recording(cfg.manifest.parent_path() / rel, cfg.electrodes), cfg.pipeline);
      rec.group_id = row.group_id;
      write_recording(rec, dst / rel);
      ++files;
    }
  }
  write_manifest(rows, dst / "manifest.csv");
  out << "preprocessed " << files << " recordings into " << dst.string() << " (" << cfg.pipeline.montage.size()
      << " bipolar channels at " << cfg.pipeline.fs_out << " Hz)\n";
  return 0;
}

/// Stack file: {"kernels": [...], "strides": [...], "paddings": [...]?, "input_len": L, "fs": Hz}.
inline rf::ConvStackSpec parse_stack(const json& j) {
  detail::ObjReader r(j, "stack");
  std::vector<std::size_t> k, s, p;
  rf::ConvStackSpec spec;
  r.get("kernels", k);
  r.get("strides", s);
  r.get("paddings", p);
  r.get("input_len", spec.input_len);
  r.get("fs", spec.fs);
  r.finish();
  if (k.empty() || k.size() != s.size()) throw ConfigError("stack: kernels and strides must be non-empty and equal length");
  if (!p.empty() && p.size() != k.size()) throw ConfigError("stack: paddings must match kernels in length");
  if (spec.input_len == 0) throw ConfigError("stack: input_len is required");
  if (!(spec.fs > 0)) throw ConfigError("stack: fs must be positive");
  for (std::size_t i = 0; i < k.size(); ++i) spec.layers.push_back({k[i], s[i], p.empty() ? 0 : p[i]});
  return spec;
}

inline int cmd_rf_calc(const rf::ConvStackSpec& spec, std::ostream& out) {
  const auto rep = rf::report(spec);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%5s  %6s  %6s  %7s  %8s  %8s  %8s\n", "layer", "kernel", "stride", "padding", "o", "j",
                "r");
  out << buf;
  std::snprintf(buf, sizeof buf, "%5s  %6s  %6s  %7s  %8zu  %8d  %8d\n", "in", "-", "-", "-", spec.input_len, 1, 1);
  out << buf;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    std::snprintf(buf, sizeof buf, "%5zu  %6zu  %6zu  %7zu  %8zu  %8llu  %8llu\n", i + 1, l.kernel, l.stride, l.padding,
                  rep.tokens[i], static_cast<unsigned long long>(rep.jump[i]),
                  static_cast<unsigned long long>(rep.field[i]));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "r = %llu samples (%.2f s at %g Hz), j = %llu, o = %zu tokens\n",
                static_cast<unsigned long long>(rep.field.back()), rep.field_seconds, spec.fs,
                static_cast<unsigned long long>(rep.jump.back()), rep.tokens.back());
  out << buf;
  if (const auto pub = rf::find_reference(spec)) {
    if (pub->r != rep.field.back() || pub->j != rep.jump.back() || pub->o != rep.tokens.back()) {
      std::snprintf(buf, sizeof buf,
                    "note: reference %s column lists r = %llu, j = %llu, o = %zu; computed values differ\n",
                    pub->label.c_str(), static_cast<unsigned long long>(pub->r), static_cast<unsigned long long>(pub->j),
                    pub->o);
      out << buf;
    } else {
      out << "matches reference " << pub->label << " column\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalRecords {
  std::vector<json> records;
  std::string text;
};

/// Scores trained fold models at every (k, horizon) and the mean-feature
/// baseline at the longest horizon.
inline EvalRecords evaluate_folds(const RunConfig& cfg, const std::vector<PatientRecord>& patients,
                                  const std::vector<std::string>& groups, const std::vector<const Biaxialformer*>& models,
                                  const std::string& command, std::ostream* warn) {
  EvalRecords res;
  std::ostringstream txt;
  const int hmax = *std::max_element(cfg.eval.horizons.begin(), cfg.eval.horizons.end());
  auto record = [&](const std::string& kind, const std::string& fold, std::size_t k, int h, const MetricRow& r) {
    json j = row_json(r);
    j["command"] = command;
    j["kind"] = kind;
    j["fold"] = fold;
    j["k"] = k;
    j["horizon"] = h;
    res.records.push_back(std::move(j));
  };

  for (std::size_t k : cfg.eval.segments_per_patient) {
    std::vector<MetricRow> rows;
    for (std::size_t f = 0; f < groups.size(); ++f) {
      const auto test = split_by_group(patients, groups[f]).second;
      for (int h : cfg.eval.horizons) {
        const MetricRow r = evaluate(*models[f], test, cfg.eval_options(k, h), groups[f], warn);
        record("model", groups[f], k, h, r);
        if (h == hmax) rows.push_back(r);
      }
    }
    if (rows.size() > 1) {
      rows.push_back(mean_row(rows));
      record("model", "Avg.", k, hmax, rows.back());
    }
    txt << "Held-out groups, k = " << k << " segment(s) per patient, horizon " << hmax << "h\n";
    render_table(txt, "Group", rows, "SM " + std::to_string(hmax) + "h");
    txt << "\n";
  }

  // Score metric per horizon (k = first configured value).
  const std::size_t k0 = cfg.eval.segments_per_patient.front();
  txt << "SM by horizon, k = " << k0 << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "Group");
  txt << buf;
  for (int h : cfg.eval.horizons) {
    std::snprintf(buf, sizeof buf, "  %8s", (std::to_string(h) + "h").c_str());
    txt << buf;
  }
  txt << "\n";
  for (const auto& g : groups) {
    std::snprintf(buf, sizeof buf, "%-8s", g.c_str());
    txt << buf;
    for (const auto& rec : res.records)
      if (rec["fold"] == g && rec["k"] == k0) {
        std::snprintf(buf, sizeof buf, "  %8.4f", rec["sm"].get<double>());
        txt << buf;
      }
    txt << "\n";
  }
  txt << "\n";

  std::vector<MetricRow> base_rows;
  for (const auto& g : groups) {
    const auto [train, test] = split_by_group(patients, g);
    const auto bl = MeanFeatureBaseline::fit(train);
    const MetricRow r = summarize(score_patients(bl.scorer(), test, cfg.eval_options(k0, hmax), warn), g, cfg.eval.fpr_cap);
    record("mean_feature_baseline", g, k0, hmax, r);
    base_rows.push_back(r);
  }
  txt << "Mean-feature baseline, k = " << k0 << ", horizon " << hmax << "h\n";
  render_table(txt, "Group", base_rows, "SM " + std::to_string(hmax) + "h");
  res.text = txt.str();
  return res;
}

inline void write_metrics(const RunConfig& cfg, const EvalRecords& ev) {
  std::string lines;
  for (const auto& r : ev.records) lines += r.dump() + "\n";
  write_text(cfg.output_dir / "metrics.jsonl", lines);
  write_text(cfg.output_dir / "metrics.txt", ev.text);
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream* progress = nullptr) {
  const auto patients = load_run_cohort(cfg);
  const auto groups = folds(cfg, patients);
  fs::create_directories(cfg.output_dir);
  io::dump(cfg.output_dir / "manifest.csv", io::slurp(cfg.manifest));
  const json echo = checkpoint_echo(cfg);
  const ModelConfig mc = cfg.model_config();
  const TrainConfig tc = cfg.train_config();

  std::string log;
  std::vector<TrainState> states;
  for (const auto& g : groups) {
    const auto train = split_by_group(patients, g).first;
    const auto dir = cfg.output_dir / "checkpoints" / g;
    fs::remove_all(dir);
    TrainHooks hooks;
    hooks.warn = progress;
    hooks.on_step = [&](const StepLog& s) {
      json j{{"fold", g}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}, {"clipped", s.clipped}};
      log += j.dump() + "\n";
      if (progress && (s.step % 50 == 0 || s.step == tc.iterations))
        *progress << "[" << g << "] step " << s.step << "/" << tc.iterations << " loss " << s.loss << "\n";
    };
    hooks.on_checkpoint = [&](const TrainState& st) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu.biaxckp", st.step);
      save_checkpoint(st, echo, dir / name);
    };
    TrainState st = train_loop(mc, tc, train, hooks);
    save_checkpoint(st, echo, dir / "final.biaxckp");
    out << "fold " << g << ": trained " << st.step << " steps on " << train.size() << " patients, final loss "
        << (st.log.empty() ? 0.0 : st.log.back().loss) << "\n";
    states.push_back(std::move(st));
  }
  write_text(cfg.output_dir / "train_log.jsonl", log);

  std::vector<const Biaxialformer*> models;
  for (const auto& s : states) models.push_back(&s.model);
  const auto ev = evaluate_folds(cfg, patients, groups, models, "train", progress);
  write_metrics(cfg, ev);
  out << ev.text;
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream* progress = nullptr) {
  const auto patients = load_run_cohort(cfg);
  const auto groups = folds(cfg, patients);
  std::vector<TrainState> states;
  for (const auto& g : groups) {
    const auto path = final_checkpoint(cfg, g);
    if (!fs::exists(path)) throw FormatError("no checkpoint for fold " + g + " at " + path.string() + " (run `biax train` first)");
    states.push_back(load_checkpoint(path, cfg.model_config()));
  }
  std::vector<const Biaxialformer*> models;
  for (const auto& s : states) models.push_back(&s.model);
  const auto ev = evaluate_folds(cfg, patients, groups, models, "eval", progress);
  write_metrics(cfg, ev);
  out << ev.text;
  return 0;
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& arm, std::ostream& out, std::ostream* progress = nullptr) {
  if (std::find(ablation_arms().begin(), ablation_arms().end(), arm) == ablation_arms().end())
    throw ConfigError("unknown ablation arm '" + arm + "'");
  require_manifest(cfg);
  AblationContext ctx{cfg, "", {}};
  ctx.hooks.warn = progress;
  ctx.held_out = default_held_out(cfg, ctx.cohort(cfg.model_config().input_len));
  const AblationTable t = run_ablation(ctx, arm);
  std::ostringstream txt;
  txt << "held-out group " << ctx.held_out << ", metrics averaged over " << cfg.ablation.seeds.size() << " seed(s)\n";
  render_ablation(txt, t);
  std::string lines;
  for (const auto& row : t.rows) {
    json j = row_json(row.metrics);
    j["arm"] = arm;
    j["held_out"] = ctx.held_out;
    if (!row.note.empty()) j["note"] = row.note;
    json seeds = json::array();
    for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
      json s = row_json(row.per_seed[i]);
      s["seed"] = cfg.ablation.seeds[i];
      seeds.push_back(std::move(s));
    }
    j["per_seed"] = std::move(seeds);
    lines += j.dump() + "\n";
  }
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / ("ablation_" + arm + ".txt"), txt.str());
  write_text(cfg.output_dir / ("ablation_" + arm + ".jsonl"), lines);
  out << txt.str();
  return 0;
}

}  // namespace biax::cli
