#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "biax/dataset.hpp"
#include "biax/error.hpp"
#include "biax/evaluation.hpp"
#include "biax/model.hpp"
#include "biax/rf_planner.hpp"
#include "biax/signal.hpp"
#include "biax/training.hpp"

namespace biax {

using json = nlohmann::json;

struct WindowConfig {
  double minutes = 5.0;
  double unit_seconds = 60.0;  // seconds per "minute"; shrinks windows for desk runs

  std::size_t samples(double fs) const {
    const double n = minutes * unit_seconds * fs;
    if (!(n >= 1.0)) throw ConfigError("window: minutes * unit_seconds * fs_out must be at least one sample");
    return static_cast<std::size_t>(std::llround(n));
  }
};

struct NamedStack {
  std::string label;
  std::vector<std::size_t> kernels, strides;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> window_minutes{3, 5, 10, 12};
  std::vector<std::size_t> segment_counts{1, 5, 7, 9, 11};
  std::vector<NamedStack> receptive_fields;
};

struct EvalConfig {
  std::vector<std::size_t> segments_per_patient{1, 7};
  std::vector<int> horizons{12, 24, 48, 72};
  double fpr_cap = 0.05;
};

/// Everything a command needs, parsed from one JSON file.
///
/// Model channel count and segment length are derived: channels from the
/// montage size, input_len from the window. Paths are resolved against the
/// config file's directory.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/out";
  std::filesystem::path manifest = "cohort/manifest.csv";
  std::vector<std::string> electrodes;  // empty: derived from channel count
  CohortSpec synth;
  PipelineConfig pipeline;
  WindowConfig window;
  ModelConfig model;
  TrainConfig train;
  std::string held_out_group;  // empty: every group in turn
  EvalConfig eval;
  AblationConfig ablation;
  json source;  // the parsed file, echoed into checkpoints

  /// Model config with derived fields and seed applied.
  ModelConfig model_config() const {
    ModelConfig m = model;
    m.channels = pipeline.montage.size();
    m.input_len = window.samples(pipeline.fs_out);
    m.seed = seed;
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed + 0x9E3779B97F4A7C15ULL;
    return t;
  }

  EvalOptions eval_options(std::size_t k, int horizon) const { return EvalOptions{k, horizon, eval.fpr_cap, 16}; }

  void set_seed(std::uint64_t s) {
    seed = s;
    synth.seed = s;
  }
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be rejected.
class ObjReader {
 public:
  ObjReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  const json& at(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  std::string key_path(const std::string& k) const { return path_ + "." + k; }

  template <class T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    try {
      out = at(k).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key_path(k) + ": wrong type (" + std::string(j_.at(k).type_name()) + ")");
    }
  }

  ObjReader sub(const std::string& k) { return ObjReader(at(k), key_path(k)); }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Montage parse_montage(const json& j, const std::string& path) {
  if (j.is_string()) {
    if (j.get<std::string>() == "double_banana") return double_banana();
    throw ConfigError(path + ": unknown montage '" + j.get<std::string>() + "'");
  }
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected \"double_banana\" or a list of [a, b] pairs");
  Montage m;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
      throw ConfigError(path + ": each pair must be [\"anode\", \"cathode\"]");
    m.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }
  return m;
}

inline std::vector<rf::ConvLayer> zip_stack(const std::vector<std::size_t>& kernels, const std::vector<std::size_t>& strides,
                                            const std::string& path) {
  if (kernels.empty() || kernels.size() != strides.size())
    throw ConfigError(path + ": kernels and strides must be non-empty lists of equal length");
  std::vector<rf::ConvLayer> out;
  for (std::size_t i = 0; i < kernels.size(); ++i) out.push_back({kernels[i], strides[i], 0});
  return out;
}

template <class E>
E parse_enum(const std::string& v, const std::vector<std::pair<std::string, E>>& table, const std::string& path) {
  std::string allowed;
  for (const auto& [name, e] : table) {
    if (name == v) return e;
    allowed += (allowed.empty() ? "" : ", ") + name;
  }
  throw ConfigError(path + ": '" + v + "' is not one of " + allowed);
}

inline void parse_model(ObjReader r, ModelConfig& m) {
  r.get("dim", m.dim);
  r.get("heads", m.heads);
  r.get("ff_mult", m.ff_mult);
  r.get("temporal_layers", m.n_temporal_layers);
  r.get("spatial_layers", m.n_spatial_layers);
  r.get("dropout", m.dropout);
  r.get("init_std", m.init_std);
  if (r.has("kernels") || r.has("strides")) {
    std::vector<std::size_t> k, s;
    r.get("kernels", k);
    r.get("strides", s);
    m.conv_stack = zip_stack(k, s, r.key_path("kernels"));
  }
  std::string v;
  if (r.has("decoder_value_source")) {
    r.get("decoder_value_source", v);
    m.decoder_value_source = parse_enum<ValueSource>(
        v, {{"spatial", ValueSource::spatial}, {"temporal", ValueSource::temporal}}, r.key_path("decoder_value_source"));
  }
  if (r.has("fusion_query_source")) {
    r.get("fusion_query_source", v);
    m.fusion_query_source = parse_enum<QuerySource>(
        v, {{"temporal_encoder", QuerySource::temporal_encoder}, {"tokenizer", QuerySource::tokenizer}},
        r.key_path("fusion_query_source"));
  }
  if (r.has("branches")) {
    r.get("branches", v);
    m.branches = parse_enum<BranchMode>(v,
                                        {{"both", BranchMode::both},
                                         {"temporal_only", BranchMode::temporal_only},
                                         {"spatial_only", BranchMode::spatial_only}},
                                        r.key_path("branches"));
  }
  r.finish();
}

}  // namespace detail

/// Parses and validates a RunConfig. Unknown keys anywhere are rejected.
inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir = {}) {
  using detail::ObjReader;
  RunConfig c;
  c.source = j;
  ObjReader top(j, "config");
  top.get("seed", c.seed);
  c.synth.seed = c.seed;
  std::string s;
  if (top.has("output_dir")) {
    top.get("output_dir", s);
    c.output_dir = s;
  }
  if (top.has("cohort")) {
    auto r = top.sub("cohort");
    if (r.has("manifest")) {
      r.get("manifest", s);
      c.manifest = s;
    }
    r.get("electrodes", c.electrodes);
    r.finish();
  }
  if (top.has("synth")) {
    auto r = top.sub("synth");
    auto& sp = c.synth;
    r.get("seed", sp.seed);
    r.get("patients", sp.patients);
    r.get("hours_per_patient", sp.hours_per_patient);
    r.get("groups", sp.groups);
    r.get("hour_seconds", sp.hour_seconds);
    r.get("fs", sp.base.fs);
    r.get("channels", sp.base.channels);
    r.get("burst_period", sp.base.burst_period);
    r.get("suppression_ratio", sp.base.suppression_ratio);
    r.get("alpha_lo", sp.base.alpha_lo);
    r.get("alpha_hi", sp.base.alpha_hi);
    r.get("coherence", sp.base.coherence);
    r.get("noise_scale", sp.base.noise_scale);
    r.finish();
  }
  if (top.has("pipeline")) {
    auto r = top.sub("pipeline");
    if (r.has("bandpass")) {
      std::vector<double> band;
      r.get("bandpass", band);
      if (band.size() != 2) throw ConfigError("config.pipeline.bandpass: expected [lo_hz, hi_hz]");
      c.pipeline.lo_hz = band[0];
      c.pipeline.hi_hz = band[1];
    }
    r.get("order", c.pipeline.order);
    r.get("fs_out", c.pipeline.fs_out);
    if (r.has("montage")) c.pipeline.montage = detail::parse_montage(r.at("montage"), r.key_path("montage"));
    r.finish();
  }
  if (top.has("window")) {
    auto r = top.sub("window");
    r.get("minutes", c.window.minutes);
    r.get("unit_seconds", c.window.unit_seconds);
    r.finish();
  }
  if (top.has("model")) detail::parse_model(top.sub("model"), c.model);
  if (top.has("train")) {
    auto r = top.sub("train");
    auto& t = c.train;
    r.get("batch_size", t.batch_size);
    r.get("lr", t.lr);
    r.get("lr_min", t.lr_min);
    r.get("iterations", t.iterations);
    r.get("beta1", t.beta1);
    r.get("beta2", t.beta2);
    r.get("eps", t.eps);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("clip_norm", t.clip_norm);
    r.get("divergence_loss", t.divergence_loss);
    r.get("held_out_group", c.held_out_group);
    r.finish();
  }
  if (top.has("eval")) {
    auto r = top.sub("eval");
    r.get("segments_per_patient", c.eval.segments_per_patient);
    r.get("horizons", c.eval.horizons);
    r.get("fpr_cap", c.eval.fpr_cap);
    r.finish();
  }
  if (top.has("ablation")) {
    auto r = top.sub("ablation");
    r.get("seeds", c.ablation.seeds);
    r.get("window_minutes", c.ablation.window_minutes);
    r.get("segment_counts", c.ablation.segment_counts);
    if (r.has("receptive_fields")) {
      const auto& arr = r.at("receptive_fields");
      if (!arr.is_array()) throw ConfigError("config.ablation.receptive_fields: expected a list");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        ObjReader e(arr[i], "config.ablation.receptive_fields[" + std::to_string(i) + "]");
        NamedStack ns;
        e.get("label", ns.label);
        e.get("kernels", ns.kernels);
        e.get("strides", ns.strides);
        e.finish();
        detail::zip_stack(ns.kernels, ns.strides, "config.ablation.receptive_fields[" + std::to_string(i) + "]");
        if (ns.label.empty()) ns.label = "stack " + std::to_string(i + 1);
        c.ablation.receptive_fields.push_back(std::move(ns));
      }
    }
    r.finish();
  }
  top.finish();

  if (!base_dir.empty()) {
    if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    if (c.manifest.is_relative()) c.manifest = base_dir / c.manifest;
  }

  // Validation before any work happens.
  c.synth.base.validate();
  if (c.synth.patients == 0 || c.synth.hours_per_patient == 0 || c.synth.groups.empty() || !(c.synth.hour_seconds > 0))
    throw ConfigError("config.synth: patients, hours_per_patient, groups and hour_seconds must be positive/non-empty");
  if (!(c.pipeline.fs_out > 0)) throw ConfigError("config.pipeline.fs_out must be positive");
  if (c.pipeline.order < 1) throw ConfigError("config.pipeline.order must be >= 1");
  if (!(c.pipeline.lo_hz > 0 && c.pipeline.lo_hz < c.pipeline.hi_hz && c.pipeline.hi_hz < c.pipeline.fs_out / 2))
    throw ConfigError("config.pipeline.bandpass must satisfy 0 < lo < hi < fs_out / 2");
  if (c.eval.segments_per_patient.empty() || c.eval.horizons.empty())
    throw ConfigError("config.eval: segments_per_patient and horizons must be non-empty");
  for (std::size_t k : c.eval.segments_per_patient)
    if (k == 0) throw ConfigError("config.eval.segments_per_patient entries must be >= 1");
  if (!(c.eval.fpr_cap >= 0.0 && c.eval.fpr_cap <= 1.0)) throw ConfigError("config.eval.fpr_cap must lie in [0,1]");
  if (c.ablation.seeds.empty()) throw ConfigError("config.ablation.seeds must be non-empty");
  c.model_config().validate();
  c.train.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

/// JSON echo of the fields that determine a model's parameter layout.
inline json model_config_json(const ModelConfig& m) {
  json stack = json::array();
  for (const auto& l : m.conv_stack) stack.push_back({l.kernel, l.stride, l.padding});
  const char* vs = m.decoder_value_source == ValueSource::spatial ? "spatial" : "temporal";
  const char* qs = m.fusion_query_source == QuerySource::temporal_encoder ? "temporal_encoder" : "tokenizer";
  const char* br = m.branches == BranchMode::both ? "both" : m.branches == BranchMode::temporal_only ? "temporal_only" : "spatial_only";
  return {{"channels", m.channels},
          {"input_len", m.input_len},
          {"dim", m.dim},
          {"heads", m.heads},
          {"ff_mult", m.ff_mult},
          {"temporal_layers", m.n_temporal_layers},
          {"spatial_layers", m.n_spatial_layers},
          {"conv_stack", stack},
          {"dropout", m.dropout},
          {"decoder_value_source", vs},
          {"fusion_query_source", qs},
          {"branches", br},
          {"init_std", m.init_std},
          {"seed", m.seed}};
}

}  // namespace biax
