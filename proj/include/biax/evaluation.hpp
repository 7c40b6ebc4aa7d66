#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biax/dataset.hpp"
#include "biax/error.hpp"
#include "biax/metrics.hpp"
#include "biax/model.hpp"
#include "biax/training.hpp"

namespace biax {

struct EvalOptions {
  std::size_t segments_per_patient = 1;  // k; predictions are combined per patient
  int horizon_hours = 0;                 // use only hour_index < horizon; 0 = all hours
  double fpr_cap = 0.05;
  std::size_t batch = 16;
};

/// Maps a batch of segments to p(poor) per segment.
using SegmentScorer = std::function<std::vector<double>(std::span<const Segment* const>)>;

struct PatientScore {
  std::string patient_id;
  std::string group_id;
  int truth = 0;
  double score = 0.0;  // mean p(poor) over the chosen segments
  int hard = 0;        // mode of per-segment (p >= 0.5)
  std::size_t segments = 0;
};

/// k segments spread evenly over the patient's eligible segments (in hour,
/// then time order); all of them if fewer than k exist.
inline std::vector<const Segment*> select_segments(const PatientRecord& p, std::size_t k, int horizon_hours) {
  if (k == 0) throw ConfigError("eval: segments_per_patient must be >= 1");
  std::vector<const Segment*> pool;
  for (const auto& hour : p.hours)
    for (const auto& s : hour)
      if (horizon_hours <= 0 || s.hour_index < horizon_hours) pool.push_back(&s);
  if (pool.size() <= k) return pool;
  std::vector<const Segment*> out;
  const std::size_t n = pool.size();
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[(2 * i + 1) * n / (2 * k)]);
  return out;
}

/// Patient-level scores. Patients with no segment inside the horizon are
/// left out (and reported on `warn`).
inline std::vector<PatientScore> score_patients(const SegmentScorer& scorer, const std::vector<PatientRecord>& patients,
                                                const EvalOptions& opt, std::ostream* warn = nullptr) {
  std::vector<PatientScore> out;
  for (const auto& p : patients) {
    const auto segs = select_segments(p, opt.segments_per_patient, opt.horizon_hours);
    if (segs.empty()) {
      if (warn) *warn << "warning: patient " << p.patient_id << " has no segment before hour " << opt.horizon_hours << "\n";
      continue;
    }
    const auto probs = scorer(segs);
    PatientScore ps{p.patient_id, p.group_id, p.label == Outcome::poor ? 1 : 0, 0.0, 0, segs.size()};
    std::vector<std::pair<std::string, int>> votes;
    for (double v : probs) {
      ps.score += v;
      votes.emplace_back(p.patient_id, v >= 0.5 ? 1 : 0);
    }
    ps.score /= static_cast<double>(probs.size());
    ps.hard = mode_aggregate(votes).front().second;
    out.push_back(std::move(ps));
  }
  return out;
}

/// SM, AUROC and AUPRC rank the mean scores; F1 uses the mode-aggregated labels.
inline MetricRow summarize(const std::vector<PatientScore>& scores, std::string label, double fpr_cap = 0.05) {
  ScoreSet soft, hard;
  for (const auto& s : scores) {
    soft.push_back({s.score, s.truth, s.patient_id, s.group_id});
    hard.push_back({static_cast<double>(s.hard), s.truth, s.patient_id, s.group_id});
  }
  MetricRow r;
  r.label = std::move(label);
  r.sm = score_metric(soft, fpr_cap);
  r.f1 = f1(hard);
  r.auroc = auroc(soft);
  r.auprc = auprc(soft);
  r.n = scores.size();
  return r;
}

inline SegmentScorer model_scorer(const Biaxialformer& model, std::size_t batch = 16) {
  return [&model, batch](std::span<const Segment* const> segs) { return predict(model, segs, batch); };
}

inline MetricRow evaluate(const Biaxialformer& model, const std::vector<PatientRecord>& patients, const EvalOptions& opt,
                          std::string label, std::ostream* warn = nullptr) {
  return summarize(score_patients(model_scorer(model, opt.batch), patients, opt, warn), std::move(label), opt.fpr_cap);
}

// ---------------------------------------------------------------------------
// Grouped (leave-one-group-out) evaluation
// ---------------------------------------------------------------------------

inline std::vector<std::string> group_ids(const std::vector<PatientRecord>& patients) {
  std::vector<std::string> g;
  for (const auto& p : patients)
    if (std::find(g.begin(), g.end(), p.group_id) == g.end()) g.push_back(p.group_id);
  return g;
}

/// (training patients, held-out patients).
inline std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_by_group(
    const std::vector<PatientRecord>& patients, const std::string& held_out) {
  std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> out;
  for (const auto& p : patients) (p.group_id == held_out ? out.second : out.first).push_back(p);
  if (out.second.empty()) throw ConfigError("eval: held-out group '" + held_out + "' not present in cohort");
  if (out.first.empty()) throw ConfigError("eval: no training patients remain after holding out '" + held_out + "'");
  return out;
}

struct FoldResult {
  std::string group;
  TrainState state;
  MetricRow row;
};

/// Trains on every group except `held_out` and scores the held-out group.
inline FoldResult grouped_eval(const ModelConfig& mc, const TrainConfig& tc, const std::vector<PatientRecord>& patients,
                               const std::string& held_out, const EvalOptions& opt, TrainHooks hooks = {}) {
  auto [train, test] = split_by_group(patients, held_out);
  std::ostream* warn = hooks.warn;
  TrainState st = train_loop(mc, tc, train, std::move(hooks));
  MetricRow row = evaluate(st.model, test, opt, held_out, warn);
  return {held_out, std::move(st), std::move(row)};
}

/// One row per group plus the arithmetic-mean "Avg." row.
inline std::vector<MetricRow> grouped_eval_all(const ModelConfig& mc, const TrainConfig& tc,
                                               const std::vector<PatientRecord>& patients, const EvalOptions& opt,
                                               const TrainHooks& hooks = {}) {
  std::vector<MetricRow> rows;
  for (const auto& g : group_ids(patients)) rows.push_back(grouped_eval(mc, tc, patients, g, opt, hooks).row);
  rows.push_back(mean_row(rows));
  return rows;
}

// ---------------------------------------------------------------------------
// Mean-feature baseline
// ---------------------------------------------------------------------------

/// Logistic regression on a single feature: the grand mean of a segment.
/// Serves as a floor: a classifier that cannot see morphology.
class MeanFeatureBaseline {
 public:
  static double feature(const Segment& s) {
    double m = 0.0;
    for (double v : s.data.samples) m += v;
    return s.data.samples.empty() ? 0.0 : m / static_cast<double>(s.data.samples.size());
  }

  /// Newton iterations on the mean log-loss of every training segment.
  static MeanFeatureBaseline fit(const std::vector<PatientRecord>& patients, int iterations = 50) {
    std::vector<double> x;
    std::vector<int> y;
    for (const auto& p : patients)
      for (const auto& h : p.hours)
        for (const auto& s : h) {
          x.push_back(feature(s));
          y.push_back(p.label == Outcome::poor ? 1 : 0);
        }
    if (x.empty()) throw ConfigError("baseline: no training segments");
    double mu = 0.0, sd = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) sd += (v - mu) * (v - mu);
    sd = std::sqrt(sd / static_cast<double>(x.size()));
    if (!(sd > 0.0)) sd = 1.0;
    double a = 0.0, b = 0.0;  // logit = a + b * z
    for (int it = 0; it < iterations; ++it) {
      double ga = 0, gb = 0, haa = 1e-9, hab = 0, hbb = 1e-9;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = (x[i] - mu) / sd;
        const double p = 1.0 / (1.0 + std::exp(-(a + b * z)));
        const double r = p - y[i], w = p * (1.0 - p);
        ga += r;
        gb += r * z;
        haa += w;
        hab += w * z;
        hbb += w * z * z;
      }
      const double det = haa * hbb - hab * hab;
      if (!(std::abs(det) > 0.0)) break;
      a -= (hbb * ga - hab * gb) / det;
      b -= (haa * gb - hab * ga) / det;
    }
    return MeanFeatureBaseline(mu, sd, a, b);
  }

  double predict(const Segment& s) const {
    return 1.0 / (1.0 + std::exp(-(a_ + b_ * (feature(s) - mu_) / sd_)));
  }

  SegmentScorer scorer() const {
    return [*this](std::span<const Segment* const> segs) {
      std::vector<double> out;
      for (const Segment* s : segs) out.push_back(predict(*s));
      return out;
    };
  }

 private:
  MeanFeatureBaseline(double mu, double sd, double a, double b) : mu_(mu), sd_(sd), a_(a), b_(b) {}
  double mu_, sd_, a_, b_;
};

}  // namespace biax
