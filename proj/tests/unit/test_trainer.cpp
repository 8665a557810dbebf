#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "forecast/errors.hpp"
#include "forecast/trainer.hpp"
#include "helpers.hpp"

namespace ag = forecast::ag;
namespace ds = forecast::datastore;
using namespace forecast::trainer;
using forecast::Tensor;
using forecast::nets::ModelConfig;
using forecast::nets::ModelKind;
using testing_support::random_tensor;

namespace {

ModelConfig tiny_weather(std::size_t d, std::size_t t_in, std::size_t t_out) {
  ModelConfig c = forecast::nets::default_model_config(ModelKind::WeatherModel);
  c.features = d;
  c.t_in = t_in;
  c.t_out = t_out;
  c.encoder_hidden = {3};
  c.decoder_hidden = {3};
  c.encoder_kernels = {3};
  c.decoder_kernels = {3};
  c.attention_q = 2;
  c.output_mid_channels = 3;
  return c;
}

ModelConfig tiny_sma(std::size_t window) {
  ModelConfig c = forecast::nets::default_model_config(ModelKind::SMA);
  c.features = 2;
  c.sma_window = window;
  c.t_out = 2;
  return c;
}

std::shared_ptr<const ds::GridSeries> synth(std::size_t steps) {
  ds::SynthConfig cfg;
  cfg.rows = cfg.cols = 6;
  cfg.steps = steps;
  cfg.features = 2;
  cfg.seed = 3;
  return std::make_shared<const ds::GridSeries>(ds::synth_advection(cfg));
}

}  // namespace

TEST(Loss, Examples) {
  const auto a = ag::constant(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(mse_loss(a, a).value()[0], 0.0);
  const auto plus1 = ag::constant(Tensor({1, 1, 2, 2}, std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(mse_loss(a, plus1).value()[0], 1.0);
  const auto diffs = ag::constant(Tensor({1, 1, 2, 2}, std::vector<double>{2, 4, 3, 5}));
  EXPECT_DOUBLE_EQ(mse_loss(a, diffs).value()[0], 1.5);
  EXPECT_THROW(mse_loss(a, ag::constant(Tensor({1, 1, 4}))), forecast::GraphError);
}

TEST(Clipping, Examples) {
  ag::ParameterSet ps;
  auto& p = ps.add("p", Tensor({2}));
  p.grad() = Tensor({2}, std::vector<double>{0, 3});
  EXPECT_DOUBLE_EQ(clip_gradients(ps, 5), 3.0);
  EXPECT_EQ(p.grad()[1], 3.0);
  p.grad() = Tensor({2}, std::vector<double>{6, 8});
  EXPECT_DOUBLE_EQ(clip_gradients(ps, 5), 10.0);
  EXPECT_NEAR(gradient_norm(ps), 5.0, 1e-12);
  EXPECT_NEAR(p.grad()[0] / p.grad()[1], 0.75, 1e-12);
  p.grad() = Tensor({2});
  clip_gradients(ps, 5);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Clipping, NeverIncreasesNormOrTurnsDirection) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    ag::ParameterSet ps;
    auto& a = ps.add("a", Tensor({3}));
    auto& b = ps.add("b", Tensor({2, 2}));
    a.grad() = random_tensor({3}, rng, -5, 5);
    b.grad() = random_tensor({2, 2}, rng, -5, 5);
    const Tensor a0 = a.grad();
    const double before = gradient_norm(ps);
    clip_gradients(ps, 3.0);
    const double after = gradient_norm(ps);
    EXPECT_LE(after, before + 1e-12);
    const double s = after / before;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.grad()[i], s * a0[i], 1e-12);
  }
}

TEST(EarlyStopping, ScriptedTraceStopsAtSixWithBestTwo) {
  EarlyStopping es(4);
  const std::vector<double> losses{5, 4, 4.1, 4.2, 4.3, 4.4};
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const bool stop = es.update(losses[i]);
    EXPECT_EQ(stop, i == 5) << "epoch " << i + 1;
  }
  EXPECT_EQ(es.best_epoch(), 2u);
  EXPECT_EQ(es.best_loss(), 4.0);
}

TEST(EarlyStopping, DecreasingRunsToTheEndAndResets) {
  EarlyStopping es(4);
  for (double v : {9.0, 8.0, 7.0, 6.0, 5.0}) EXPECT_FALSE(es.update(v));
  EXPECT_EQ(es.best_epoch(), 5u);
  EarlyStopping reset(2);
  EXPECT_FALSE(reset.update(1.0));
  EXPECT_FALSE(reset.update(2.0));
  EXPECT_FALSE(reset.update(2.0));  // equal is not an increase
  EXPECT_FALSE(reset.update(3.0));
  EXPECT_TRUE(reset.update(4.0));
  EXPECT_EQ(reset.best_epoch(), 1u);
}

TEST(EarlyStopping, BestIsAlwaysTheMinimum) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    EarlyStopping es(3);
    std::vector<double> seen;
    while (seen.size() < 40) {
      seen.push_back(u(rng));
      if (es.update(seen.back())) break;
    }
    const auto it = std::min_element(seen.begin(), seen.end());
    EXPECT_EQ(es.best_loss(), *it);
    EXPECT_EQ(es.best_epoch(), static_cast<std::size_t>(it - seen.begin()) + 1);
  }
}

TEST(Optimizer, TinyLearningRateIsANoOp) {
  auto series = synth(20);
  auto windows = ds::make_windows(series, 3, 2, "temperature");
  const auto batch = ds::materialize(ds::assemble_batches(windows, 4, 0)[0]);
  auto model = forecast::nets::make_model(tiny_weather(2, 3, 2));
  TrainConfig cfg;
  cfg.learning_rate = 1e-12;
  auto opt = make_optimizer(cfg);
  const double before = train_step(*model, batch, *opt, cfg);
  const double after = train_step(*model, batch, *opt, cfg);
  EXPECT_LT(std::abs(after - before), 1e-9);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  ag::ParameterSet ps;
  auto& p = ps.add("p", Tensor({2}, std::vector<double>{1.0, -1.0}));
  p.grad() = Tensor({2}, std::vector<double>{0.3, -20.0});
  Adam adam(0.01);
  adam.step(ps);
  // bias-corrected first step is lr * g / |g|
  EXPECT_NEAR(p.value()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value()[1], -1.0 + 0.01, 1e-9);
  EXPECT_EQ(adam.state().size(), 2u);
}

TEST(Fit, ReproducibleWithSameSeeds) {
  auto series = synth(40);
  auto windows = ds::make_windows(series, 3, 2, "temperature");
  const std::vector<ds::SampleWindow> train(windows.begin(), windows.begin() + 25), val(windows.begin() + 25, windows.end());
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 5;
  auto a = forecast::nets::make_model(tiny_weather(2, 3, 2));
  auto b = forecast::nets::make_model(tiny_weather(2, 3, 2));
  const auto ra = fit(*a, train, val, cfg);
  const auto rb = fit(*b, train, val, cfg);
  EXPECT_EQ(ra.train_losses, rb.train_losses);
  EXPECT_EQ(ra.val_losses, rb.val_losses);
  EXPECT_EQ(ra.val_losses.size(), 3u);
  EXPECT_EQ(ra.best_val_loss, *std::min_element(ra.val_losses.begin(), ra.val_losses.end()));
}

TEST(Fit, RestoresBestParameters) {
  auto series = synth(40);
  auto windows = ds::make_windows(series, 3, 2, "temperature");
  const std::vector<ds::SampleWindow> train(windows.begin(), windows.begin() + 25), val(windows.begin() + 25, windows.end());
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.learning_rate = 0.05;
  auto model = forecast::nets::make_model(tiny_weather(2, 3, 2));
  const auto r = fit(*model, train, val, cfg);
  EXPECT_NEAR(evaluate(*model, val, cfg.batch_size).mse, r.best_val_loss, 1e-12);
}

TEST(Fit, NonFiniteLossAborts) {
  auto series = synth(20);
  auto windows = ds::make_windows(series, 3, 2, "temperature");
  auto model = forecast::nets::make_model(tiny_weather(2, 3, 2));
  for (auto& p : model->parameters().items()) p.value().fill(std::nan(""));
  TrainConfig cfg;
  cfg.max_epochs = 2;
  try {
    fit(*model, windows, {}, cfg);
    FAIL();
  } catch (const forecast::TrainingError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 1"), std::string::npos);
    EXPECT_NE(what.find("lr="), std::string::npos);
  }
}

TEST(Evaluate, PhysicalMaeScalesWithRecordRange) {
  // a fabricated batch whose record has range 40 on the target
  auto series = synth(20);
  auto windows = ds::make_windows(series, 2, 2, "temperature");
  auto batches = ds::assemble_batches(windows, 3, 0);
  for (auto& b : batches) {
    b.norm.min[0] = 250.0;
    b.norm.max[0] = 290.0;
  }
  auto model = forecast::nets::make_model(tiny_sma(2));
  const auto m = evaluate(*model, batches);
  EXPECT_NEAR(m.physical_mae, 40.0 * m.mae, 1e-9 * m.physical_mae);
  EXPECT_NEAR(m.physical_mse, 1600.0 * m.mse, 1e-9 * m.physical_mse);
}

TEST(GradientCheck, LinearMapIsExact) {
  std::mt19937_64 rng(7);
  ag::ParameterSet ps;
  auto& w = ps.add("w", random_tensor({3, 2, 1, 1}, rng));
  const auto x = ag::constant(random_tensor({1, 2, 3, 3}, rng));
  const auto r = gradient_check([&] { return ag::sum(ag::conv2d(x, w.var())); }, ps);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.checked, 6u);
}

TEST(GradientCheck, DetectsWrongGradient) {
  ag::ParameterSet ps;
  auto& p = ps.add("p", Tensor({1}, 2.0));
  // a leaf with a deliberately broken backward: value p^2, reported grad 0
  auto broken = [&] {
    auto node = ag::constant(Tensor({1}, p.value()[0] * p.value()[0]));
    return ag::add(ag::sum(node), ag::scale(ag::sum(p.var()), 0.0));
  };
  EXPECT_GT(gradient_check(broken, ps).max_relative_error, 0.5);
}

TEST(Suite, TwoWindowsTwoModelsGiveTwoByTwoTable) {
  auto series = synth(120);
  const auto windows = ds::rolling_splits(120, 80, 40);
  ASSERT_EQ(windows.size(), 2u);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 8;
  const std::vector<ModelSpec> specs{{"weather_model", tiny_weather(2, 3, 2), cfg}, {"sma", tiny_sma(3), cfg}};
  SuiteOptions opt;
  opt.t_out = 2;
  opt.output_dir = std::filesystem::temp_directory_path() / "forecast_suite_test";
  std::filesystem::remove_all(*opt.output_dir);
  const auto r = run_experiments(series, windows, specs, opt);
  EXPECT_EQ(r.results.size(), 4u);
  for (const auto& e : r.results) EXPECT_TRUE(e.ok) << e.error;
  EXPECT_EQ(r.table.experiments.size(), 2u);
  EXPECT_EQ(r.table.models.size(), 2u);
  EXPECT_EQ(r.table.test_mse.size(), 2u);
  EXPECT_EQ(r.table.test_mse[0].size(), 2u);
  const std::string csv = r.table.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "experiment,split,weather_model,sma");
  EXPECT_TRUE(std::filesystem::exists(*opt.output_dir / "sma" / "exp_1" / "loss.csv"));
  EXPECT_TRUE(std::filesystem::exists(*opt.output_dir / "weather_model" / "exp_0" / "model.fckpt"));

  const auto again = run_experiments(series, windows, specs, SuiteOptions{.t_out = 2});
  EXPECT_EQ(again.table.to_csv(), csv);
}

TEST(Suite, FailedExperimentIsRecorded) {
  auto series = synth(120);
  const auto windows = ds::rolling_splits(120, 80, 40);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  auto bad = tiny_sma(3);
  bad.sma_window = 70;  // longer than any history the split provides
  const std::vector<ModelSpec> specs{{"sma_long", bad, cfg}, {"sma", tiny_sma(3), cfg}};
  const auto r = run_experiments(series, windows, specs, SuiteOptions{.t_out = 2});
  EXPECT_FALSE(r.results[0].ok);
  EXPECT_FALSE(r.results[0].error.empty());
  EXPECT_TRUE(r.results[1].ok);
  EXPECT_NE(r.table.to_csv().find("failed"), std::string::npos);
}
