#include <cmath>
#include <numbers>
#include <random>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

namespace forecast::datastore {

namespace {

struct Blob {
  double row;
  double col;
  double heading;
  double amplitude;
};

// Signed offset on a ring of length n, in [-n/2, n/2).
double wrap(double delta, double n) {
  delta = std::fmod(delta, n);
  if (delta < -n / 2) delta += n;
  if (delta >= n / 2) delta -= n;
  return delta;
}

FeatureInfo synthetic_feature(std::size_t k) {
  switch (k) {
    case 0:
      return {"temperature", "K"};
    case 1:
      return {"relative_humidity", "%"};
    case 2:
      return {"geopotential", "m2 s-2"};
    default:
      return {"synthetic_" + std::to_string(k), "1"};
  }
}

}  // namespace

GridSeries synth_advection(const SynthConfig& config) {
  if (config.rows < 3 || config.cols < 3 || config.steps < 1 || config.features < 1) {
    throw DomainError("synthetic grid needs M, N >= 3 and T, d >= 1");
  }
  const auto rows = static_cast<double>(config.rows);
  const auto cols = static_cast<double>(config.cols);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Blob> blobs(config.blobs);
  for (Blob& b : blobs) {
    b.row = config.origin ? (*config.origin)[0] : unit(rng) * rows;
    b.col = config.origin ? (*config.origin)[1] : unit(rng) * cols;
    b.heading = config.heading ? *config.heading : unit(rng) * 2.0 * std::numbers::pi;
    b.amplitude = 0.6 + 0.4 * unit(rng);
  }

  // Features k > 0 look k steps ahead, so track positions past the last frame.
  const std::size_t horizon = config.steps + config.features;
  std::vector<std::vector<Blob>> track(horizon, blobs);
  for (std::size_t t = 1; t < horizon; ++t) {
    for (std::size_t b = 0; b < blobs.size(); ++b) {
      Blob next = track[t - 1][b];
      next.row += config.speed * std::sin(next.heading);
      next.col += config.speed * std::cos(next.heading);
      next.heading += config.turn_rate;
      track[t][b] = next;
    }
  }

  const double inv_two_sigma2 = 1.0 / (2.0 * config.sigma * config.sigma);
  auto field = [&](std::size_t t, std::size_t i, std::size_t j) {
    double v = 0.0;
    for (const Blob& b : track[t]) {
      const double dr = wrap(static_cast<double>(i) - b.row, rows);
      const double dc = wrap(static_cast<double>(j) - b.col, cols);
      v += b.amplitude * std::exp(-(dr * dr + dc * dc) * inv_two_sigma2);
    }
    return v;
  };

  std::normal_distribution<double> noise(0.0, config.noise > 0 ? config.noise : 1.0);
  Tensor values({config.steps, config.features, config.rows, config.cols});
  std::size_t idx = 0;
  for (std::size_t t = 0; t < config.steps; ++t)
    for (std::size_t k = 0; k < config.features; ++k)
      for (std::size_t i = 0; i < config.rows; ++i)
        for (std::size_t j = 0; j < config.cols; ++j, ++idx) {
          const double f = field(t + k, i, j);
          double v = 0.0;
          if (k == 0) {
            v = 280.0 + 10.0 * f;
          } else if (k % 2 == 1) {
            v = 60.0 - 25.0 * f;
          } else {
            v = 1000.0 + 150.0 * f;
          }
          if (config.noise > 0) v += noise(rng);
          values[idx] = v;
        }

  std::vector<FeatureInfo> features;
  for (std::size_t k = 0; k < config.features; ++k) features.push_back(synthetic_feature(k));
  GridGeometry geometry = GridGeometry::regular(config.rows, config.cols, 45.0, 20.0, -0.25, 0.25);
  return GridSeries(std::move(values), std::move(features), std::move(geometry), config.start, config.step);
}

GridSeries synth_advection(std::size_t rows, std::size_t cols, std::size_t steps, std::size_t features,
                           std::uint64_t seed) {
  SynthConfig config;
  config.rows = rows;
  config.cols = cols;
  config.steps = steps;
  config.features = features;
  config.seed = seed;
  return synth_advection(config);
}

}  // namespace forecast::datastore
