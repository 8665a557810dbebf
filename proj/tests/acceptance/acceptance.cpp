// Acceptance gate: one PASS/FAIL line per criterion.
//
//   forecast_acceptance [name-substring ...]
//
// Set FORECAST_SMOKE_GRID to a grid file to add the real-data smoke run.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "forecast/datastore.hpp"
#include "forecast/flowfield.hpp"
#include "forecast/interpolate.hpp"
#include "forecast/nets/layers.hpp"
#include "forecast/nets/models.hpp"
#include "forecast/trainer.hpp"
#include "helpers.hpp"

namespace ds = forecast::datastore;
namespace ag = forecast::ag;
namespace nets = forecast::nets;
namespace tr = forecast::trainer;
using forecast::Tensor;
using testing_support::random_tensor;

namespace {

// Desk-scale epoch budget for the ordering suite.
constexpr std::size_t kOrderingEpochs = 12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---- gradient correctness ---------------------------------------------------

Outcome gradients() {
  constexpr double kTol = 1e-4;
  std::mt19937_64 rng(101);
  std::vector<std::pair<std::string, double>> worst;

  {
    ag::ParameterSet ps;
    nets::ConvLSTMCell cell(ps, "cell", 3, 4, 3, rng);
    auto& x = ps.add("x", random_tensor({2, 3, 5, 5}, rng));
    auto& h = ps.add("h", random_tensor({2, 4, 5, 5}, rng));
    auto& s = ps.add("s", random_tensor({2, 4, 5, 5}, rng));
    const auto r = testing_support::check(
        [&] {
          const auto next = cell.step(x.var(), {h.var(), s.var()});
          return ag::concat({next.h, next.s}, 1);
        },
        ps);
    worst.emplace_back("convlstm_step", r.max_relative_error);
  }
  for (auto axis : {nets::SoftmaxAxis::Feature, nets::SoftmaxAxis::Spatial}) {
    ag::ParameterSet ps;
    nets::Attention att(ps, "att", 3, 4, 2, 3, 3, axis, rng);
    auto& window = ps.add("window", random_tensor({2, 4, 3, 5, 5}, rng));
    auto& h = ps.add("h", random_tensor({2, 2, 5, 5}, rng));
    auto& x = ps.add("x", random_tensor({2, 3, 5, 5}, rng));
    const auto r = testing_support::check(
        [&] {
          const auto w = att.weights(att.energies(att.window_term(window.var()), h.var()));
          return nets::apply_attention(w, x.var());
        },
        ps);
    worst.emplace_back(axis == nets::SoftmaxAxis::Feature ? "attention(feature)" : "attention(spatial)",
                       r.max_relative_error);
  }
  {
    ag::ParameterSet ps;
    nets::OutputConv head(ps, "out", 4, 5, 1, 3, rng);
    auto& x = ps.add("x", random_tensor({2, 4, 5, 5}, rng));
    const auto r = testing_support::check([&] { return head(x.var()); }, ps);
    worst.emplace_back("output_conv", r.max_relative_error);
  }
  for (std::size_t size : {4u, 6u}) {
    nets::ModelConfig c = nets::default_model_config(nets::ModelKind::UNet);
    c.features = 1;
    c.t_in = 3;
    c.t_out = 2;
    c.unet_depth = 2;
    c.unet_base_channels = 3;
    c.init_seed = 7;
    nets::UNet unet(c);
    auto& ps = unet.parameters();
    auto& x = ps.add("frames", random_tensor({1, 3, size, size}, rng));
    const auto r = testing_support::check([&] { return unet.forward_frames(x.var()); }, ps);
    worst.emplace_back("unet " + std::to_string(size) + "x" + std::to_string(size), r.max_relative_error);
  }

  Outcome out{true, ""};
  for (const auto& [name, err] : worst) {
    out.pass = out.pass && err < kTol;
    out.detail += (out.detail.empty() ? "" : ", ") + name + " " + num(err);
  }
  out.detail = "max relative error: " + out.detail + " (tol 1e-4)";
  return out;
}

// ---- attention invariants -----------------------------------------------------

Outcome attention_invariants() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> dim(3, 7), feat(1, 4), batch(1, 2), steps(1, 4);
  double worst_sum = 0.0, min_weight = 1.0;
  std::size_t sign_violations = 0, instances = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = batch(rng), d = feat(rng), m = dim(rng), n = dim(rng), t_in = steps(rng);
    for (auto axis : {nets::SoftmaxAxis::Feature, nets::SoftmaxAxis::Spatial}) {
      ag::NoGradGuard no_grad;
      ag::ParameterSet ps;
      nets::Attention att(ps, "a", d, t_in, 3, 2, 3, axis, rng);
      const auto window = ag::constant(random_tensor({b, t_in, d, m, n}, rng, -5, 5));
      const auto h = ag::constant(random_tensor({b, 3, m, n}, rng, -1, 1));
      const Tensor w = att.weights(att.energies(att.window_term(window), h)).value();
      for (double v : w.data()) min_weight = std::min(min_weight, v);
      const std::size_t plane = m * n;
      if (axis == nets::SoftmaxAxis::Feature) {
        for (std::size_t s = 0; s < b; ++s)
          for (std::size_t c = 0; c < plane; ++c) {
            double total = 0.0;
            for (std::size_t k = 0; k < d; ++k) total += w[(s * d + k) * plane + c];
            worst_sum = std::max(worst_sum, std::abs(total - 1.0));
          }
      } else {
        for (std::size_t sk = 0; sk < b * d; ++sk) {
          double total = 0.0;
          for (std::size_t c = 0; c < plane; ++c) total += w[sk * plane + c];
          worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        }
      }
      const Tensor x = random_tensor({b, d, m, n}, rng, -3, 3);
      const Tensor y = nets::apply_attention(ag::constant(w), ag::constant(x)).value();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const bool same = (x[i] > 0 && y[i] > 0) || (x[i] < 0 && y[i] < 0) || (x[i] == 0 && y[i] == 0);
        if (!same) ++sign_violations;
      }
      ++instances;
    }
  }
  return {min_weight >= 0.0 && worst_sum <= 1e-6 && sign_violations == 0,
          std::to_string(instances) + " instances, min weight " + num(min_weight) + ", worst |sum-1| " +
              num(worst_sum) + ", sign violations " + std::to_string(sign_violations)};
}

// ---- IDW / LOOCV --------------------------------------------------------------

double oracle_idw(const std::vector<double>& v, const std::vector<double>& d, double p) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] == 0.0) return v[i];
  double num = 0, den = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double w = 1.0 / std::pow(d[i], p);
    num += w * v[i];
    den += w;
  }
  return num / den;
}

double oracle_loocv(const std::vector<double>& v, const std::vector<double>& pairwise,
                    const std::vector<double>& candidates) {
  const std::size_t n = v.size();
  if (n == 1) return forecast::interpolate::kFallbackPower;
  double best = candidates[0], best_err = std::numeric_limits<double>::infinity();
  for (double p : candidates) {
    double err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> vv, dd;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) {
          vv.push_back(v[j]);
          dd.push_back(pairwise[i * n + j]);
        }
      const double e = v[i] - oracle_idw(vv, dd, p);
      err += e * e;
    }
    err /= static_cast<double>(n);
    // ties resolve to the earliest candidate; rounding must not break a true tie
    if (err < best_err * (1 - 1e-12)) {
      best_err = err;
      best = p;
    }
  }
  return best;
}

Outcome idw_oracle() {
  namespace ip = forecast::interpolate;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> lat(36, 42), lon(20, 30), val(-10, 35);
  std::uniform_int_distribution<std::size_t> count(1, 6);
  const std::vector<double> candidates{1, 2, 3, 4, 5};
  std::size_t mismatches = 0, bound_violations = 0, hit_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = count(rng);
    std::vector<ip::LatLon> where(n);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      where[i] = {lat(rng), lon(rng)};
      v[i] = val(rng);
    }
    const auto pairwise = ip::station_distances(where);
    const double p = ip::loocv_power(v, pairwise.km, candidates);
    if (p != oracle_loocv(v, pairwise.km, candidates)) ++mismatches;

    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    for (int q = 0; q < 20; ++q) {
      std::vector<double> d(n);
      const ip::LatLon target{lat(rng), lon(rng)};
      for (std::size_t i = 0; i < n; ++i) d[i] = ip::haversine(target, where[i]);
      const double est = ip::idw(v, d, p);
      if (est < lo - 1e-12 * (1 + std::abs(lo)) || est > hi + 1e-12 * (1 + std::abs(hi))) ++bound_violations;
    }
    const std::size_t s = trial % n;
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = ip::haversine(where[s], where[i]);
    if (ip::idw(v, d, p) != v[s]) ++hit_failures;
  }
  return {mismatches == 0 && bound_violations == 0 && hit_failures == 0,
          "100 instances: loocv mismatches " + std::to_string(mismatches) + ", bound violations " +
              std::to_string(bound_violations) + ", exact-hit failures " + std::to_string(hit_failures)};
}

// ---- flow field ----------------------------------------------------------------

Tensor gaussian(std::size_t rows, std::size_t cols, double r0, double c0, double sigma) {
  Tensor y({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double dr = static_cast<double>(i) - r0, dc = static_cast<double>(j) - c0;
      y[i * cols + j] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  return y;
}

Outcome flow_oracle() {
  namespace ff = forecast::flowfield;
  double err = 0.0;
  const Tensor y({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor prev({3, 3}, std::vector<double>{0.5, 1, -2, 3, 9, 4, 1, 7, 2});
  const auto f3 = ff::flow_matrix(y, prev);
  err = std::max(err, std::abs(f3[0] - ((5.0 - 1) + (5.0 - 7))));
  err = std::max(err, std::abs(f3[1] - ((5.0 - 3) + (5.0 - 4))));
  const auto same = ff::flow_matrix(y, y);
  err = std::max({err, std::abs(same[0]), std::abs(same[1])});

  const auto g = [](double r2) { return std::exp(-r2 / 2); };
  const auto f5 = ff::flow_matrix(gaussian(5, 5, 2, 2, 1), gaussian(5, 5, 2, 1, 1));
  auto at = [&](std::size_t i, std::size_t j, std::size_t c) { return f5[((i - 1) * 3 + (j - 1)) * 2 + c]; };
  err = std::max(err, std::abs(at(2, 2, 0) - 2 * (1 - g(2))));
  err = std::max(err, std::abs(at(2, 2, 1) - (1 - g(4))));
  err = std::max(err, std::abs(at(2, 3, 0) - 2 * (g(1) - g(5))));
  err = std::max(err, std::abs(at(2, 3, 1) - (g(1) - g(9))));
  err = std::max(err, std::abs(at(2, 1, 1)));

  Tensor blob({6, 8, 10});
  for (std::size_t t = 0; t < 6; ++t) {
    const Tensor frame = gaussian(8, 10, 3.5, 2.0 + static_cast<double>(t), 1.5);
    std::copy(frame.raw(), frame.raw() + 80, blob.raw() + t * 80);
  }
  const auto identity = ff::perturbation_diagnostic(blob, [](double v, std::size_t, std::size_t) { return v; });
  double scale_angle = 0.0;
  for (double c : {0.5, 3.0, 40.0}) {
    scale_angle = std::max(scale_angle, ff::perturbation_diagnostic(blob, [c](double v, std::size_t, std::size_t) {
                                          return c * v;
                                        }).mean_angle_degrees);
  }
  const auto flipped = ff::perturbation_diagnostic(
      blob, [](double v, std::size_t i, std::size_t j) { return (i + j) % 2 ? -v : v; });
  // 1e-9 degrees absorbs the last-bit rounding of c * v inside the flow arithmetic
  const bool pass = err <= 1e-12 && identity.mean_angle_degrees == 0.0 && scale_angle <= 1e-9 &&
                    flipped.mean_angle_degrees > 0.0;
  return {pass, "max hand-value error " + num(err) + ", identity " + num(identity.mean_angle_degrees) +
                    " deg, positive scaling " + num(scale_angle) + " deg, sign flip " +
                    num(flipped.mean_angle_degrees) + " deg"};
}

// ---- trainability ----------------------------------------------------------------

Outcome trainability() {
  ds::SynthConfig sc;
  sc.rows = 8;
  sc.cols = 8;
  sc.features = 3;
  sc.steps = 17;
  sc.seed = 11;
  const auto series = std::make_shared<const ds::GridSeries>(ds::synth_advection(sc));
  auto windows = ds::make_windows(series, 5, 5, "temperature");
  const auto batch = ds::materialize(ds::assemble_batches(windows, windows.size(), 0).front());

  nets::ModelConfig mc = nets::default_model_config(nets::ModelKind::WeatherModel);
  mc.features = 3;
  mc.t_in = 5;
  mc.t_out = 5;
  mc.init_seed = 3;
  auto model = nets::make_model(mc);
  tr::TrainConfig cfg;
  auto optimizer = tr::make_optimizer(cfg);
  double loss = std::numeric_limits<double>::infinity();
  std::size_t epoch = 0;
  while (epoch < 500 && loss >= 1e-3) {
    loss = tr::train_step(*model, batch, *optimizer, cfg);
    ++epoch;
  }
  return {loss < 1e-3, std::to_string(windows.size()) + "-window batch: train loss " + num(loss) + " at epoch " +
                           std::to_string(epoch) + " (target < 1e-3 within 500)"};
}

// ---- model ordering --------------------------------------------------------------

Outcome ordering() {
  ds::SynthConfig sc;
  sc.rows = 16;
  sc.cols = 16;
  sc.features = 3;
  sc.steps = 400;
  sc.seed = 1;
  const auto series = std::make_shared<const ds::GridSeries>(ds::synth_advection(sc));
  const auto windows = ds::rolling_splits(400, 200, 100);

  tr::TrainConfig train;
  train.max_epochs = kOrderingEpochs;
  train.seed = 1;
  auto wm = nets::default_model_config(nets::ModelKind::WeatherModel);
  wm.encoder_hidden = {16, 16, 8};
  wm.decoder_hidden = {8, 16, 16};
  auto convlstm = nets::default_model_config(nets::ModelKind::ConvLSTM);
  convlstm.convlstm_hidden = {1, 16, 16};
  auto sma = nets::default_model_config(nets::ModelKind::SMA);
  std::vector<tr::ModelSpec> specs;
  for (auto* c : {&wm, &convlstm, &sma}) {
    c->init_seed = 1;
    specs.push_back({std::string(nets::to_string(c->kind)), *c, train});
  }
  tr::SuiteOptions options;
  options.t_out = 10;
  const auto suite = tr::run_experiments(series, windows, specs, options);
  for (const auto& r : suite.results)
    if (!r.ok) return {false, "experiment " + std::to_string(r.experiment_id) + " / " + r.model + ": " + r.error};
  const auto mean = suite.table.mean_test_mse();
  const double w = mean[0], c = mean[1], s = mean[2];
  const double margin = 1.0 - w / s;
  return {w <= c && margin >= 0.10, "mean test MSE: weather_model " + num(w) + ", convlstm " + num(c) + ", sma " +
                                        num(s) + "; margin over sma " + num(100 * margin) + "% (need >= 10%)"};
}

// ---- protocol fidelity -------------------------------------------------------------

Outcome protocol() {
  using namespace std::chrono;
  const auto date = [](int y, unsigned m) { return ds::TimePoint{sys_days{year{y} / month{m} / day{1}}}; };
  const auto splits = ds::rolling_splits(date(2000, 1), date(2006, 1), hours(3), 24, 6);
  std::size_t bad = 0;
  if (splits.size() != 9) ++bad;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& w = splits[i];
    const int months = static_cast<int>(i) * 6;
    if (!w.start_time || *w.start_time != date(2000 + months / 12, static_cast<unsigned>(1 + months % 12))) ++bad;
    const auto begin_steps = static_cast<std::size_t>((*w.start_time - date(2000, 1)) / hours(3));
    if (w.span.begin != begin_steps) ++bad;
    if (w.val.size() != w.span.size() / 10 || w.test.size() != w.span.size() / 10) ++bad;
    if (w.train.begin != w.span.begin || w.train.end != w.val.begin || w.val.end != w.test.begin ||
        w.test.end != w.span.end) {
      ++bad;
    }
  }
  // patience 4 on 5, 4, 4.1, 4.2, 4.3, 4.4: four increases end training at epoch 6, best epoch 2
  tr::EarlyStopping es(4);
  std::size_t stop_epoch = 0;
  for (double v : {5.0, 4.0, 4.1, 4.2, 4.3, 4.4, 4.5}) {
    if (es.update(v)) {
      stop_epoch = es.epochs();
      break;
    }
  }
  const bool stop_ok = stop_epoch == 6 && es.best_epoch() == 2;
  return {bad == 0 && stop_ok, std::to_string(splits.size()) + " windows from 2000-01 every 6 months, " +
                                   std::to_string(bad) + " split mismatches; early stop at epoch " +
                                   std::to_string(stop_epoch) + ", best " + std::to_string(es.best_epoch())};
}

// ---- recursive length ----------------------------------------------------------------

Outcome decode_lengths() {
  std::mt19937_64 rng(404);
  nets::ModelConfig mc = nets::default_model_config(nets::ModelKind::WeatherModel);
  mc.features = 3;
  mc.t_in = 4;
  mc.encoder_hidden = {4, 4};
  mc.decoder_hidden = {4, 4};
  mc.encoder_kernels = {3, 1};
  mc.decoder_kernels = {3, 1};
  auto model = nets::make_model(mc);
  const auto before = model->parameters().snapshot();
  const auto inputs = ag::constant(random_tensor({2, 4, 3, 6, 6}, rng, 0, 1));
  std::string detail;
  bool pass = true;
  for (std::size_t t_out : {1u, 5u, 10u, 20u}) {
    ag::NoGradGuard no_grad;
    const auto out = model->forward(inputs, 0, t_out);
    const auto& s = out.predictions.shape();
    const bool ok = s == forecast::Shape{2, t_out, 6, 6} && out.predictions.value().all_finite();
    pass = pass && ok;
    detail += (detail.empty() ? "" : ", ") + std::to_string(t_out) + "->" + std::to_string(s.size() > 1 ? s[1] : 0);
  }
  const bool unchanged = model->parameters().snapshot() == before;
  return {pass && unchanged, "frames per requested length " + detail +
                                 (unchanged ? "; parameters unchanged" : "; parameters changed")};
}

// ---- optional real-data smoke --------------------------------------------------------

std::optional<Outcome> real_data_smoke() {
  const char* path = std::getenv("FORECAST_SMOKE_GRID");
  if (!path || !*path) return std::nullopt;
  const auto series = std::make_shared<const ds::GridSeries>(ds::ingest_grid(path, ds::GridSchema{}));
  const std::size_t span = std::min<std::size_t>(series->steps(), 400);
  const auto windows = ds::rolling_splits(span, span, span);
  tr::TrainConfig train;
  train.max_epochs = 1;
  train.max_train_batches = 4;
  auto wm = nets::default_model_config(nets::ModelKind::WeatherModel);
  wm.encoder_hidden = {8, 8};
  wm.decoder_hidden = {8, 8};
  wm.encoder_kernels = {3, 1};
  wm.decoder_kernels = {3, 1};
  tr::SuiteOptions options;
  options.t_out = 10;
  const auto suite = tr::run_experiments(series, windows, {{"weather_model", wm, train}}, options);
  const auto& r = suite.results.front();
  return Outcome{r.ok && std::isfinite(r.test.physical_mae),
                 r.ok ? "test physical MAE " + num(r.test.physical_mae) : r.error};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {"gradient_correctness", 120, gradients},
      {"attention_invariants", 0, attention_invariants},
      {"idw_oracle_equivalence", 0, idw_oracle},
      {"flow_field_oracle", 0, flow_oracle},
      {"trainability", 300, trainability},
      {"model_ordering", 1800, ordering},
      {"protocol_fidelity", 0, protocol},
      {"recursive_length", 0, decode_lengths},
  };
  const std::vector<std::string> filters(argv + 1, argv + argc);
  const auto selected = [&](const std::string& name) {
    if (filters.empty()) return true;
    for (const auto& f : filters)
      if (name.find(f) != std::string::npos) return true;
    return false;
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected(c.name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0 && seconds > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + num(c.budget_seconds) + " s budget";
    }
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), seconds, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  if (selected("real_data_smoke")) {
    if (const auto smoke = real_data_smoke()) {
      std::printf("%s real_data_smoke: %s\n", smoke->pass ? "PASS" : "FAIL", smoke->detail.c_str());
      if (!smoke->pass) ++failures;
    } else {
      std::printf("SKIP real_data_smoke: set FORECAST_SMOKE_GRID to a grid file to run it\n");
    }
  }
  return failures == 0 ? 0 : 1;
}
