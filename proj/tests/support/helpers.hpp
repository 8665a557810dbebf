#pragma once

#include <random>

#include "forecast/autograd.hpp"
#include "forecast/datastore.hpp"
#include "forecast/tensor.hpp"
#include "forecast/trainer.hpp"

namespace testing_support {

using forecast::Shape;
using forecast::Tensor;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// sum(y * R) for a fixed random R, so every output entry carries an O(1) weight.
inline forecast::ag::Var weighted_sum(const forecast::ag::Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return forecast::ag::sum(forecast::ag::mul(y, forecast::ag::constant(random_tensor(y.shape(), rng))));
}

inline forecast::trainer::GradientCheckResult check(const std::function<forecast::ag::Var()>& f,
                                                    forecast::ag::ParameterSet& params,
                                                    std::size_t max_entries = 0) {
  forecast::trainer::GradientCheckOptions options;
  options.max_entries_per_tensor = max_entries;
  return forecast::trainer::gradient_check([&] { return weighted_sum(f()); }, params, options);
}

/// Grid series over a regular 1-degree mesh from raw [T, d, M, N] values.
inline forecast::datastore::GridSeries make_series(Tensor values, std::vector<std::string> names = {}) {
  using namespace forecast::datastore;
  const std::size_t d = values.dim(1);
  if (names.empty()) {
    names.push_back("temperature");
    for (std::size_t k = 1; k < d; ++k) names.push_back("f" + std::to_string(k));
  }
  std::vector<FeatureInfo> features;
  for (auto& n : names) features.push_back({n, ""});
  auto geometry = GridGeometry::regular(values.dim(2), values.dim(3), 40.0, 25.0, -1.0, 1.0);
  return GridSeries(std::move(values), std::move(features), std::move(geometry),
                    parse_iso8601("2000-01-01T00:00:00"), std::chrono::hours(3));
}

inline std::shared_ptr<const forecast::datastore::GridSeries> shared_series(Tensor values) {
  return std::make_shared<const forecast::datastore::GridSeries>(make_series(std::move(values)));
}

}  // namespace testing_support
