#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "biax/dataset.hpp"
#include "biax/error.hpp"
#include "biax/model.hpp"
#include "biax/ops.hpp"
#include "biax/rng.hpp"

namespace biax {

inline constexpr double kProbClamp = 1e-12;

/// Mean binary cross-entropy of p(poor) against labels (1 = poor).
/// Predictions are clamped to [1e-12, 1 - 1e-12].
inline Tensor bce_loss(const Tensor& yhat, std::span<const int> y) {
  if (yhat.rank() != 1 || yhat.dim(0) != y.size())
    throw DimensionError("bce_loss: predictions " + shape_str(yhat.shape()) + " vs " + std::to_string(y.size()) + " labels");
  const std::size_t n = y.size();
  std::vector<int> labels(y.begin(), y.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(yhat[i], kProbClamp, 1.0 - kProbClamp);
    total += labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return Tensor::from_op({}, {-total / static_cast<double>(n)}, {yhat}, [labels = std::move(labels), n](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = p.data[i];
      if (v < kProbClamp || v > 1.0 - kProbClamp) continue;  // clamped: flat
      const double d = labels[i] ? -1.0 / v : 1.0 / (1.0 - v);
      p.grad[i] += o.grad[0] * d / static_cast<double>(n);
    }
  });
}

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
inline double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
  if (total == 0) return lr_max;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct TrainConfig {
  std::size_t batch_size = 10;
  double lr = 1e-4;
  double lr_min = 0.0;
  std::size_t iterations = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint
  double clip_norm = 0.0;            // global-norm clipping; 0 disables
  double divergence_loss = 1e3;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (lr_min < 0.0 || lr_min > lr) throw ConfigError("train: lr_min must lie in [0, lr]");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ConfigError("train: invalid Adam constants");
  }
};

/// Adam with bias correction. Moments are stored per parameter in the
/// ParamStore's order.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;

  explicit AdamState(const ParamStore& params = {}) {
    for (const auto& [_, p] : params.items()) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
  }
};

inline void adam_step(ParamStore& params, AdamState& st, double lr, double beta1, double beta2, double eps) {
  auto& items = params.items();
  if (items.size() != st.m.size()) throw ContractError("adam_step: moment buffers do not match parameters");
  for (const auto& [name, p] : items)
    for (double g : p.grad())
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + name);
  ++st.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& p = items[k].second;
    if (st.m[k].size() != p.numel()) throw ContractError("adam_step: moment shape mismatch for " + items[k].first);
    auto w = p.mutable_data();
    const auto g = p.grad();
    if (g.empty()) continue;
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool clipped = false;
};

/// Everything needed to continue training bit-identically.
struct TrainState {
  Biaxialformer model;
  AdamState adam;
  Rng rng;
  std::size_t step = 0;
  std::vector<StepLog> log;

  TrainState(const ModelConfig& mc, std::uint64_t seed) : model(mc), adam(model.params()), rng(seed) {}
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  // Called after steps that are multiples of checkpoint_every and after the last step.
  std::function<void(const TrainState&)> on_checkpoint;
  std::ostream* warn = &std::clog;
};

namespace detail {
inline double global_grad_norm(const ParamStore& ps) {
  double s = 0.0;
  for (const auto& [_, p] : ps.items())
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}
}  // namespace detail

/// One optimisation step: draw a batch, forward, BCE, backward, Adam.
inline StepLog train_step(TrainState& st, const TrainConfig& tc, const TrainingSampler& sampler, TrainHooks& hooks) {
  std::vector<const Segment*> batch;
  std::vector<int> labels;
  for (std::size_t b = 0; b < tc.batch_size; ++b) {
    const Segment& s = sampler.draw(st.rng);
    batch.push_back(&s);
    labels.push_back(static_cast<int>(s.label));
  }
  ForwardContext ctx{true, &st.rng, nullptr};
  const Tensor probs = st.model.forward(make_batch(batch), ctx);
  const Tensor loss = bce_loss(select_last(probs, 1), labels);
  StepLog rec;
  rec.step = st.step + 1;
  rec.lr = cosine_lr(st.step, tc.iterations, tc.lr, tc.lr_min);
  rec.loss = loss.item();
  if (!std::isfinite(rec.loss) || rec.loss > tc.divergence_loss)
    throw NumericError("training diverged at step " + std::to_string(rec.step) + " (loss " + std::to_string(rec.loss) + ")");
  st.model.params().zero_grad();
  loss.backward();
  if (tc.clip_norm > 0.0) {
    const double norm = detail::global_grad_norm(st.model.params());
    if (norm > tc.clip_norm) {
      const double f = tc.clip_norm / norm;
      for (auto& [_, p] : st.model.params().items())
        for (double& g : p.mutable_grad()) g *= f;
      rec.clipped = true;
      if (hooks.warn)
        *hooks.warn << "step " << rec.step << ": gradient norm " << norm << " clipped to " << tc.clip_norm << "\n";
    }
  }
  adam_step(st.model.params(), st.adam, rec.lr, tc.beta1, tc.beta2, tc.eps);
  st.step = rec.step;
  st.log.push_back(rec);
  return rec;
}

/// Continues `st` until `until` steps (capped at tc.iterations).
inline void train_until(TrainState& st, const TrainConfig& tc, const TrainingSampler& sampler, std::size_t until,
                        TrainHooks hooks = {}) {
  until = std::min(until, tc.iterations);
  while (st.step < until) {
    const StepLog rec = train_step(st, tc, sampler, hooks);
    if (hooks.on_step) hooks.on_step(rec);
    const bool periodic = tc.checkpoint_every > 0 && st.step % tc.checkpoint_every == 0;
    if (hooks.on_checkpoint && (periodic || st.step == tc.iterations)) hooks.on_checkpoint(st);
  }
}

/// Fresh model from mc (seeded by mc.seed), sampler stream seeded by tc.seed,
/// trained for tc.iterations steps on `patients`.
inline TrainState train_loop(const ModelConfig& mc, const TrainConfig& tc, const std::vector<PatientRecord>& patients,
                             TrainHooks hooks = {}) {
  tc.validate();
  bool good = false, poor = false;
  for (const auto& p : patients) (p.label == Outcome::poor ? poor : good) = true;
  if (!good || !poor) throw ConfigError("train: cohort must contain both outcome classes");
  TrainState st(mc, tc.seed);
  const TrainingSampler sampler(patients, hooks.warn);
  train_until(st, tc, sampler, tc.iterations, std::move(hooks));
  return st;
}

/// p(poor) for each segment, evaluated in batches without dropout.
inline std::vector<double> predict(const Biaxialformer& model, std::span<const Segment* const> segs, std::size_t batch = 16) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(segs.size());
  for (std::size_t i = 0; i < segs.size(); i += batch) {
    const auto chunk = segs.subspan(i, std::min(batch, segs.size() - i));
    const Tensor probs = model.forward(make_batch(chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back(probs.data()[2 * b + 1]);
  }
  return out;
}

}  // namespace biax
