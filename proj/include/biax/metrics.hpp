#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "biax/error.hpp"

namespace biax {

struct ScoreEntry {
  double score = 0.0;  // p(poor)
  int truth = 0;       // 1 = poor
  std::string patient_id;
  std::string group_id;
};

using ScoreSet = std::vector<ScoreEntry>;

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0;
};

namespace detail {

inline void check_scores(const ScoreSet& s, const char* what) {
  std::size_t pos = 0;
  for (const auto& e : s) {
    if (!std::isfinite(e.score)) throw NumericError(std::string(what) + ": non-finite score for " + e.patient_id);
    if (e.truth != 0 && e.truth != 1) throw ContractError(std::string(what) + ": truth labels must be 0 or 1");
    pos += static_cast<std::size_t>(e.truth);
  }
  if (pos == 0 || pos == s.size())
    throw MetricUndefinedError(std::string(what) + ": needs at least one positive and one negative entry");
}

// Points ordered by decreasing threshold (+inf first), i.e. nondecreasing fpr/tpr.
inline std::vector<RocPoint> sweep(const ScoreSet& s, const char* what) {
  check_scores(s, what);
  std::vector<std::pair<double, int>> v;
  v.reserve(s.size());
  std::size_t P = 0;
  for (const auto& e : s) {
    v.emplace_back(e.score, e.truth);
    P += static_cast<std::size_t>(e.truth);
  }
  const std::size_t N = s.size() - P;
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity(), 0, 0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double t = v[i].first;
    // score >= threshold counts as positive, so all ties enter together
    for (; i < v.size() && v[i].first == t; ++i) (v[i].second ? tp : fp)++;
    out.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), t,
                   tp, fp});
  }
  return out;
}

}  // namespace detail

/// One point per distinct threshold (every score plus +inf), sorted by fpr.
inline std::vector<RocPoint> roc_points(const ScoreSet& s) { return detail::sweep(s, "roc_points"); }

/// Maximum TPR over thresholds whose FPR does not exceed fpr_cap.
inline double score_metric(const ScoreSet& s, double fpr_cap = 0.05) {
  double best = 0.0;
  for (const auto& p : detail::sweep(s, "score_metric"))
    if (p.fpr <= fpr_cap) best = std::max(best, p.tpr);
  return best;
}

/// F1 of the poor class with predictions score >= threshold.
inline double f1(const ScoreSet& s, double threshold = 0.5) {
  detail::check_scores(s, "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& e : s) {
    const bool pred = e.score >= threshold;
    if (pred && e.truth) ++tp;
    else if (pred) ++fp;
    else if (e.truth) ++fn;
  }
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

/// Trapezoidal area under the ROC curve.
inline double auroc(const ScoreSet& s) {
  const auto pts = detail::sweep(s, "auroc");
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  return a;
}

/// Step-wise area under the precision-recall curve: sum of recall increments
/// times the precision at the threshold where recall increased.
inline double auprc(const ScoreSet& s) {
  const auto pts = detail::sweep(s, "auprc");
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dr = pts[i].tpr - pts[i - 1].tpr;
    if (dr > 0.0) a += dr * static_cast<double>(pts[i].tp) / static_cast<double>(pts[i].tp + pts[i].fp);
  }
  return a;
}

/// Per-patient majority of hard labels; a tie resolves to 0 (good).
/// Output is sorted by patient id.
inline std::vector<std::pair<std::string, int>> mode_aggregate(const std::vector<std::pair<std::string, int>>& per_segment) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> votes;  // (good, poor)
  for (const auto& [pid, label] : per_segment) {
    auto& v = votes[pid];
    (label ? v.second : v.first)++;
  }
  std::vector<std::pair<std::string, int>> out;
  for (const auto& [pid, v] : votes) out.emplace_back(pid, v.second > v.first ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// Metric tables
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string label;
  double sm = 0.0;
  double f1 = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  std::size_t n = 0;
};

inline MetricRow mean_row(const std::vector<MetricRow>& rows, std::string label = "Avg.") {
  MetricRow m;
  m.label = std::move(label);
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.sm += r.sm;
    m.f1 += r.f1;
    m.auroc += r.auroc;
    m.auprc += r.auprc;
    m.n += r.n;
  }
  const double k = static_cast<double>(rows.size());
  m.sm /= k;
  m.f1 /= k;
  m.auroc /= k;
  m.auprc /= k;
  return m;
}

inline void render_table(std::ostream& os, const std::string& first_col, const std::vector<MetricRow>& rows,
                         const std::string& sm_header = "SM") {
  std::size_t w = first_col.size();
  for (const auto& r : rows) w = std::max(w, r.label.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %8s  %5s\n", static_cast<int>(w), first_col.c_str(),
                sm_header.c_str(), "F1", "AUROC", "AUPRC", "n");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f  %8.4f  %5zu\n", static_cast<int>(w), r.label.c_str(), r.sm,
                  r.f1, r.auroc, r.auprc, r.n);
    os << buf;
  }
}

}  // namespace biax
