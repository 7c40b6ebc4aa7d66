#pragma once

// Brute-force metric oracles: every threshold enumerated, every pair counted.
// Independent of the sweep in biax/metrics.hpp.

#include <algorithm>
#include <limits>
#include <set>
#include <vector>

#include "biax/metrics.hpp"
#include "biax/rng.hpp"

namespace biax::test {

inline ScoreSet random_score_set(Rng& rng, std::size_t n, bool coarse) {
  ScoreSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
    // coarse scores force ties
    const double v = coarse ? static_cast<double>(rng.below(8)) / 8.0 : rng.uniform();
    s.push_back({std::clamp(v + (y ? 0.15 : 0.0), 0.0, 1.0), y, "P" + std::to_string(i), "A"});
  }
  return s;
}

// Pairwise ranking probability with half credit for ties.
inline double oracle_auroc(const ScoreSet& s) {
  double win = 0, pairs = 0;
  for (const auto& a : s)
    for (const auto& b : s)
      if (a.truth == 1 && b.truth == 0) {
        pairs += 1;
        win += a.score > b.score ? 1.0 : a.score == b.score ? 0.5 : 0.0;
      }
  return win / pairs;
}

// Positives at each distinct score, weighted by precision at that score.
inline double oracle_auprc(const ScoreSet& s) {
  std::set<double> distinct;
  std::size_t P = 0;
  for (const auto& e : s) {
    distinct.insert(e.score);
    P += e.truth;
  }
  double a = 0;
  for (double t : distinct) {
    std::size_t at = 0, tp = 0, pred = 0;
    for (const auto& e : s) {
      if (e.score == t && e.truth) ++at;
      if (e.score >= t) {
        ++pred;
        tp += e.truth;
      }
    }
    a += static_cast<double>(at) / static_cast<double>(P) * static_cast<double>(tp) / static_cast<double>(pred);
  }
  return a;
}

inline double oracle_sm(const ScoreSet& s, double cap) {
  std::vector<double> th{std::numeric_limits<double>::infinity()};
  for (const auto& e : s) th.push_back(e.score);
  std::size_t P = 0;
  for (const auto& e : s) P += e.truth;
  const std::size_t N = s.size() - P;
  double best = 0;
  for (double t : th) {
    std::size_t tp = 0, fp = 0;
    for (const auto& e : s)
      if (e.score >= t) (e.truth ? tp : fp)++;
    if (static_cast<double>(fp) / static_cast<double>(N) <= cap) best = std::max(best, static_cast<double>(tp) / static_cast<double>(P));
  }
  return best;
}

inline double oracle_f1(const ScoreSet& s) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& e : s) {
    const bool pred = e.score >= 0.5;
    tp += pred && e.truth;
    fp += pred && !e.truth;
    fn += !pred && e.truth;
  }
  return 2 * tp / (2 * tp + fp + fn);
}

}  // namespace biax::test
