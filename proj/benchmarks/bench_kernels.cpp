#include <benchmark/benchmark.h>

#include <random>

#include "forecast/autograd.hpp"
#include "forecast/interpolate.hpp"
#include "forecast/nets/layers.hpp"
#include "forecast/nets/models.hpp"

namespace ag = forecast::ag;
namespace nets = forecast::nets;
using forecast::Tensor;

namespace {

Tensor random_tensor(const forecast::Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// args: channels, grid size, kernel
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             k = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(1);
  const auto x = ag::constant(random_tensor({8, c, n, n}, rng));
  const auto w = ag::constant(random_tensor({4 * c, c, k, k}, rng));
  ag::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w).value().raw());
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 16, 3})->Args({16, 16, 5})->Args({32, 32, 3});

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(2);
  ag::ParameterSet ps;
  auto& x = ps.add("x", random_tensor({8, c, n, n}, rng));
  auto& w = ps.add("w", random_tensor({4 * c, c, 3, 3}, rng));
  for (auto _ : state) {
    ps.zero_grad();
    ag::backward(ag::sum(ag::conv2d(x.var(), w.var())));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 16})->Args({32, 16});

void BM_ConvLSTMStep(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  ag::ParameterSet ps;
  nets::ConvLSTMCell cell(ps, "cell", 3, hidden, 5, rng);
  const auto x = ag::constant(random_tensor({8, 3, 16, 16}, rng));
  const auto state0 = cell.zero_state(8, 16, 16);
  for (auto _ : state) {
    ps.zero_grad();
    const auto next = cell.step(x, cell.step(x, state0));
    ag::backward(ag::sum(next.h));
  }
}
BENCHMARK(BM_ConvLSTMStep)->Arg(16)->Arg(32);

void BM_IdwGrid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> km(1, 500), val(260, 300);
  std::vector<double> values(n), distances(n);
  for (auto& v : values) v = val(rng);
  for (auto& d : distances) d = km(rng);
  for (auto _ : state) {
    for (int cell = 0; cell < 1024; ++cell)
      benchmark::DoNotOptimize(forecast::interpolate::idw(values, distances, 2.0));
  }
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_IdwGrid)->Arg(6)->Arg(50);

void BM_LoocvPower(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lat(36, 42), lon(20, 30), val(260, 300);
  std::vector<forecast::interpolate::LatLon> where(n);
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    where[i] = {lat(rng), lon(rng)};
    values[i] = val(rng);
  }
  const auto pairwise = forecast::interpolate::station_distances(where);
  const std::vector<double> candidates{1, 2, 3, 4, 5};
  for (auto _ : state) benchmark::DoNotOptimize(forecast::interpolate::loocv_power(values, pairwise.km, candidates));
}
BENCHMARK(BM_LoocvPower)->Arg(6)->Arg(40);

void BM_WeatherModelForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  nets::ModelConfig c = nets::default_model_config(nets::ModelKind::WeatherModel);
  c.features = 3;
  auto model = nets::make_model(c);
  std::mt19937_64 rng(6);
  const auto inputs = ag::constant(random_tensor({1, c.t_in, 3, n, n}, rng));
  ag::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(inputs, 0).predictions.value().raw());
}
BENCHMARK(BM_WeatherModelForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
