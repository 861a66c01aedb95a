#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "remar/trainer.hpp"

using namespace remar;

namespace {

ParameterStore store_with(std::vector<double> values, std::vector<double> grads) {
  ParameterStore s;
  const std::size_t n = values.size();
  Tensor& t = s.add("p", Tensor({n}, std::move(values)));
  auto g = t.mutable_grad();
  std::copy(grads.begin(), grads.end(), g.begin());
  return s;
}

std::vector<TrainingExample> tiny_examples(std::size_t patients, std::size_t slices,
                                           std::uint64_t seed = 1) {
  PhantomSpec spec;
  spec.size = 16;
  spec.artifact_rate = 0.5;
  const auto pairs = generate_dataset(seed, spec, patients, slices);
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_examples(pairs, idx, LossSpec{});
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.levels = 2;
  c.model.base_channels = 4;
  c.val_fraction = 0.0;
  return c;
}

}  // namespace

TEST(Schedule, HalvesEveryTwentyEpochs) {
  EXPECT_EQ(lr_at_epoch(1e-4, 20, 0), 1e-4);
  EXPECT_EQ(lr_at_epoch(1e-4, 20, 19), 1e-4);
  EXPECT_EQ(lr_at_epoch(1e-4, 20, 20), 5e-5);
  EXPECT_EQ(lr_at_epoch(1e-4, 20, 40), 2.5e-5);
  EXPECT_EQ(lr_at_epoch(1e-4, 0, 99), 1e-4);
}

TEST(AdamW, ZeroGradientZeroDecayUnchanged) {
  auto s = store_with({0.3, -0.7}, {0.0, 0.0});
  AdamWState st;
  adamw_step(s, st, 1e-3, 0.0);
  EXPECT_EQ(s.items()[0].tensor.data()[0], 0.3);
  EXPECT_EQ(s.items()[0].tensor.data()[1], -0.7);
}

TEST(AdamW, ScalarHandStep) {
  const double lr = 1e-3, eps = 1e-8;
  auto s = store_with({0.5}, {1.0});
  AdamWState st;
  adamw_step(s, st, lr, 0.0);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(s.items()[0].tensor.data()[0], 0.5 - lr * 1.0 / (1.0 + eps), 1e-12);
  // Second step with g = 1: moments stay at 1 after correction.
  adamw_step(s, st, lr, 0.0);
  EXPECT_NEAR(s.items()[0].tensor.data()[0], 0.5 - 2 * lr / (1.0 + eps), 1e-12);
}

TEST(AdamW, DecoupledDecayScalesParameter) {
  auto s = store_with({2.0}, {0.0});
  AdamWState st;
  adamw_step(s, st, 0.1, 0.5);
  EXPECT_NEAR(s.items()[0].tensor.data()[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}

TEST(AdamW, NonFiniteGradientRejected) {
  auto s = store_with({1.0}, {std::nan("")});
  AdamWState st;
  EXPECT_THROW(adamw_step(s, st, 0.1, 0.0), std::runtime_error);
}

TEST(Clip, BelowThresholdIsNoOp) {
  auto s = store_with({0, 0}, {0.3, 0.4});
  const auto r = clip_gradients(s, 1.0);
  EXPECT_DOUBLE_EQ(r.norm, 0.5);
  EXPECT_EQ(r.factor, 1.0);
}

TEST(Clip, ScalesToMaxNorm) {
  auto s = store_with({0, 0}, {6.0, 8.0});
  const auto r = clip_gradients(s, 1.0);
  EXPECT_DOUBLE_EQ(r.factor, 0.1);
  EXPECT_NEAR(global_grad_norm(s), 1.0, 1e-9);
}

TEST(Clip, ZeroGradientsSafe) {
  auto s = store_with({0, 0}, {0.0, 0.0});
  const auto r = clip_gradients(s, 1.0);
  EXPECT_EQ(r.factor, 1.0);
  EXPECT_EQ(r.norm, 0.0);
}

TEST(Config, KeyValueRoundTripAndRejection) {
  TrainConfig c;
  c.epochs = 7;
  c.lr0 = 3e-4;
  c.loss = LossSpec::from_label("l1+msssim");
  c.model.levels = 3;
  c.train_dataset = TrainSet::Art;
  const auto back = TrainConfig::from_map(c.to_map());
  EXPECT_EQ(back.epochs, 7u);
  EXPECT_EQ(back.lr0, 3e-4);
  EXPECT_EQ(back.loss.label(), "l1+msssim");
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train_dataset, TrainSet::Art);
  EXPECT_THROW(TrainConfig::from_map({{"learning_rate", "1"}}), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_map({{"epochs", "-3"}}), std::invalid_argument);
  std::istringstream text("# comment\nepochs = 3\nloss.terms=l1+ffl\nmodel.base_channels=4\n");
  const auto parsed = TrainConfig::from_map(parse_key_values(text));
  EXPECT_EQ(parsed.epochs, 3u);
  EXPECT_TRUE(parsed.loss.use_ffl);
  EXPECT_EQ(parsed.model.base_channels, 4u);
}

TEST(HoldOut, ByPatient) {
  const auto ex = tiny_examples(10, 2);
  const auto [tr, va] = hold_out_patients(ex, 0.1, 3);
  EXPECT_EQ(tr.size() + va.size(), ex.size());
  ASSERT_EQ(va.size(), 2u);
  EXPECT_EQ(va[0].patient_id, va[1].patient_id);
  for (const auto& t : tr) EXPECT_NE(t.patient_id, va[0].patient_id);
}

TEST(Train, DeterministicStepsAndClippedNorms) {
  const auto ex = tiny_examples(2, 4);
  auto c = tiny_config();
  c.max_steps = 10;
  c.batch_size = 2;
  const auto a = train(c, ex);
  const auto b = train(c, ex);
  ASSERT_EQ(a.steps.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.steps[i].total, b.steps[i].total);
    EXPECT_LE(a.steps[i].clipped_norm, c.grad_clip_norm + 1e-9);
  }
}

TEST(Train, LrLogFollowsSchedule) {
  const auto ex = tiny_examples(1, 2);
  auto c = tiny_config();
  c.epochs = 42;
  c.augment = false;
  const auto r = train(c, ex);
  ASSERT_EQ(r.epochs.size(), 42u);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.lr, 1e-4 * std::pow(0.5, static_cast<double>(e.epoch / 20)));
  }
}

TEST(Train, EarlyStoppingRetainsBestEpoch) {
  const auto ex = tiny_examples(4, 2);
  auto c = tiny_config();
  c.epochs = 30;
  c.early_stop_patience = 2;
  c.augment = false;
  c.lr0 = 0.5;  // large enough to make validation PSNR wander
  const auto [tr, va] = hold_out_patients(ex, 0.25, 1);
  const auto r = train(c, tr, va);
  ASSERT_TRUE(r.best_val_psnr.has_value());
  double best = -1e300;
  for (const auto& e : r.epochs) best = std::max(best, *e.val_psnr);
  EXPECT_EQ(*r.best_val_psnr, best);
  if (r.epochs.size() < c.epochs) EXPECT_GE(r.epochs.size(), c.early_stop_patience + 1);
  const auto check = evaluate_examples(r.model, va);
  EXPECT_DOUBLE_EQ(check.all.psnr, best);
}

TEST(Train, NoiseFreeVariantEqualsFullWithNoiseOff) {
  const auto ex = tiny_examples(2, 2);
  auto a = tiny_config();
  a.max_steps = 5;
  a.model = apply_variant(a.model, "++");
  auto b = tiny_config();
  b.max_steps = 5;
  b.model.use_noise = false;
  const auto ra = train(a, ex);
  const auto rb = train(b, ex);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ra.steps[i].total, rb.steps[i].total);
}

TEST(Train, DivergenceRestoresLastGoodState) {
  auto ex = tiny_examples(1, 2);
  ex[1].target[0] = std::nan("");
  auto c = tiny_config();
  c.augment = false;
  c.batch_size = 1;
  c.epochs = 3;
  const auto r = train(c, ex);
  EXPECT_TRUE(r.diverged);
  for (const auto& p : r.model.parameters().items()) {
    for (double v : p.tensor.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Grid, RejectsUnknownPreset) {
  GridSpec spec;
  spec.preset = "table3";
  EXPECT_THROW(run_grid(spec), std::invalid_argument);
}

TEST(Grid, AblationTableRowsAndParameterOrdering) {
  GridSpec spec;
  spec.preset = "table2";
  spec.phantom.size = 32;
  spec.phantom.artifact_rate = 0.4;
  spec.patients = 4;
  spec.slices_per_patient = 4;
  spec.base = tiny_config();
  spec.base.model.levels = 2;
  spec.base.max_steps = 2;
  spec.base.epochs = 1;
  const auto grid = run_grid(spec);
  ASSERT_EQ(grid.rows.size(), 5u);
  for (const auto& r : grid.rows) EXPECT_TRUE(r.error.empty()) << r.name << ": " << r.error;
  std::map<std::string, std::size_t> n;
  for (const auto& r : grid.rows) n[r.name] = r.parameters;
  EXPECT_GT(n["++++"], n["full"]);
  EXPECT_GT(n["full"], n["++"]);
  EXPECT_GT(n["++"], n["+"]);
  EXPECT_GT(n["+"], n["+++"]);
  std::ostringstream table;
  grid.write_table(table);
  EXPECT_NE(table.str().find("D_All PSNR"), std::string::npos);
}
