#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "biax/checkpoint.hpp"
#include "biax/training.hpp"
#include "test_util.hpp"

using namespace biax;
using test::desk_model;

namespace {

const std::vector<PatientRecord>& toy() {
  static const auto c = test::toy_cohort("training", 8, 30, 5);
  return c;
}

TrainConfig quick(std::size_t iterations) {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.iterations = iterations;
  tc.seed = 99;
  return tc;
}

bool same_params(const Biaxialformer& a, const Biaxialformer& b) {
  const auto& x = a.params().items();
  const auto& y = b.params().items();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::equal(x[i].second.data().begin(), x[i].second.data().end(), y[i].second.data().begin())) return false;
  return true;
}

}  // namespace

TEST(Bce, Examples) {
  EXPECT_NEAR(bce_loss(Tensor({0.5, 0.5}, {2}), std::vector<int>{0, 1}).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(Tensor({0.9}, {1}), std::vector<int>{1}).item(), 0.10536051565782628, 1e-15);
  EXPECT_NEAR(bce_loss(Tensor({0.1}, {1}), std::vector<int>{0}).item(), 0.10536051565782628, 1e-15);
  EXPECT_LT(bce_loss(Tensor({1.0, 0.0}, {2}), std::vector<int>{1, 0}).item(), 1e-10);
  EXPECT_TRUE(std::isfinite(bce_loss(Tensor({0.0}, {1}), std::vector<int>{1}).item()));
  EXPECT_THROW(bce_loss(Tensor({0.5}, {1}), std::vector<int>{0, 1}), DimensionError);
}

TEST(Bce, Gradient) {
  Tensor p({0.2, 0.7}, {2}, true);
  bce_loss(p, std::vector<int>{0, 1}).backward();
  EXPECT_NEAR(p.grad()[0], 0.5 / 0.8, 1e-15);
  EXPECT_NEAR(p.grad()[1], -0.5 / 0.7, 1e-15);
}

TEST(CosineLr, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, 1e-18);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(200, 100, 1e-3, 1e-5), 1e-5, 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, 1e-3, 0), cosine_lr(s - 1, 100, 1e-3, 0));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore ps;
  Tensor w = ps.add("w", {3});
  w.mutable_data()[0] = 1.5;
  w.mutable_grad();
  AdamState st(ps);
  adam_step(ps, st, 0.1, 0.9, 0.999, 1e-8);
  EXPECT_EQ(w[0], 1.5);
  EXPECT_EQ(w[1], 0.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore ps;
  Tensor w = ps.add("w", {3});
  auto g = w.mutable_grad();
  g[0] = 4.0;
  g[1] = -0.01;
  g[2] = 1e3;
  AdamState st(ps);
  adam_step(ps, st, 0.01, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(w[0], -0.01, 1e-10);
  EXPECT_NEAR(w[1], 0.01, 1e-8);
  EXPECT_NEAR(w[2], -0.01, 1e-10);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, QuadraticMovesTowardZero) {
  ParamStore ps;
  Tensor w = ps.add("w", {4});
  const std::vector<double> init{1.0, -2.0, 0.5, -0.25};
  std::copy(init.begin(), init.end(), w.mutable_data().begin());
  AdamState st(ps);
  for (int it = 0; it < 30; ++it) {
    ps.zero_grad();
    scale(sum(mul(w, w)), 0.5).backward();
    adam_step(ps, st, 0.01, 0.9, 0.999, 1e-8);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(std::abs(w[i]), std::abs(init[i]));
}

TEST(Adam, NonFiniteGradientRejected) {
  ParamStore ps;
  Tensor w = ps.add("w", {1});
  w.mutable_grad()[0] = std::nan("");
  AdamState st(ps);
  EXPECT_THROW(adam_step(ps, st, 0.1, 0.9, 0.999, 1e-8), NumericError);
}

TEST(TrainLoop, ZeroIterationsLeavesInitialModel) {
  const auto st = train_loop(desk_model(), quick(0), toy());
  EXPECT_EQ(st.step, 0u);
  EXPECT_TRUE(same_params(st.model, Biaxialformer(desk_model())));
}

TEST(TrainLoop, SingleClassCohortRejected) {
  std::vector<PatientRecord> good;
  for (const auto& p : toy())
    if (p.label == Outcome::good) good.push_back(p);
  EXPECT_THROW(train_loop(desk_model(), quick(1), good), ConfigError);
}

TEST(TrainLoop, LossDropsOnToyCohort) {
  const auto st = train_loop(desk_model(), quick(120), toy());
  ASSERT_EQ(st.log.size(), 120u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += st.log[i].loss;
    tail += st.log[st.log.size() - 1 - i].loss;
  }
  EXPECT_LT(tail, 0.5 * head) << "first10 " << head / 10 << " last10 " << tail / 10;
}

TEST(TrainLoop, Deterministic) {
  ModelConfig mc = desk_model();
  mc.dropout = 0.1;
  const auto a = train_loop(mc, quick(15), toy());
  const auto b = train_loop(mc, quick(15), toy());
  EXPECT_TRUE(same_params(a.model, b.model));
  EXPECT_EQ(encode_checkpoint(a, {}), encode_checkpoint(b, {}));
}

TEST(TrainLoop, ResumeFromCheckpointIsBitIdentical) {
  ModelConfig mc = desk_model();
  mc.dropout = 0.1;
  const TrainConfig tc = quick(24);
  const TrainingSampler sampler(toy(), nullptr);

  TrainState straight(mc, tc.seed);
  train_until(straight, tc, sampler, 24);

  TrainState first(mc, tc.seed);
  train_until(first, tc, sampler, 11);
  const auto dir = test::scratch("resume");
  save_checkpoint(first, json{{"note", "mid"}}, dir / "mid.biaxckp");
  json echo;
  TrainState resumed = load_checkpoint(dir / "mid.biaxckp", mc, &echo);
  EXPECT_EQ(echo["note"], "mid");
  EXPECT_EQ(resumed.step, 11u);
  train_until(resumed, tc, sampler, 24);

  EXPECT_TRUE(same_params(straight.model, resumed.model));
  EXPECT_EQ(encode_checkpoint(straight, {}), encode_checkpoint(resumed, {}));
}

TEST(TrainLoop, CheckpointHookCadence) {
  TrainConfig tc = quick(7);
  tc.checkpoint_every = 3;
  std::vector<std::size_t> at;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState& s) { at.push_back(s.step); };
  train_loop(desk_model(), tc, toy(), hooks);
  EXPECT_EQ(at, (std::vector<std::size_t>{3, 6, 7}));
}

TEST(TrainLoop, ClippingIsLogged) {
  TrainConfig tc = quick(2);
  tc.clip_norm = 1e-9;
  std::ostringstream warn;
  TrainHooks hooks;
  hooks.warn = &warn;
  const auto st = train_loop(desk_model(), tc, toy(), hooks);
  EXPECT_TRUE(st.log[0].clipped);
  EXPECT_NE(warn.str().find("clipped"), std::string::npos);
}

TEST(TrainLoop, DivergenceAborts) {
  TrainConfig tc = quick(3);
  tc.divergence_loss = 1e-6;
  try {
    train_loop(desk_model(), tc, toy());
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto st = train_loop(desk_model(), quick(1), toy());
  const std::string buf = encode_checkpoint(st, {});
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + buf.substr(8), desk_model()), MagicError);
  EXPECT_THROW(decode_checkpoint(buf.substr(0, buf.size() - 3), desk_model()), TruncatedError);
  EXPECT_THROW(decode_checkpoint(buf + "z", desk_model()), FormatError);
  ModelConfig other = desk_model();
  other.dim = 8;
  EXPECT_THROW(decode_checkpoint(buf, other), FormatError);
}

TEST(Predict, MatchesForward) {
  const Biaxialformer m(desk_model());
  std::vector<const Segment*> segs;
  for (const auto& p : toy())
    for (const auto& h : p.hours)
      for (const auto& s : h) segs.push_back(&s);
  segs.resize(5);
  const auto p = predict(m, segs, 2);
  const Tensor probs = m.forward(make_batch(segs));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p[i], probs[2 * i + 1], 1e-12);
}
