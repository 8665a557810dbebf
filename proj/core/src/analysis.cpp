#include <algorithm>
#include <cmath>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

namespace forecast::datastore {

CorrelationResult compute_correlation(const Tensor& values) {
  if (values.rank() != 4) throw DomainError("correlation expects [T, d, M, N]");
  const std::size_t steps = values.dim(0), d = values.dim(1), cells = values.dim(2) * values.dim(3);
  if (steps < 2) throw DomainError("correlation needs at least 2 time steps");

  CorrelationResult result;
  result.matrix = Tensor({d, d});
  std::vector<double> mean(d), centered(steps * d), norm(d);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < d; ++k) {
      double m = 0.0;
      for (std::size_t t = 0; t < steps; ++t) m += values[(t * d + k) * cells + c];
      mean[k] = m / static_cast<double>(steps);
      double ss = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        const double v = values[(t * d + k) * cells + c] - mean[k];
        centered[t * d + k] = v;
        ss += v * v;
      }
      norm[k] = std::sqrt(ss);
      if (norm[k] == 0.0) ++result.zero_variance_entries;
    }
    for (std::size_t a = 0; a < d; ++a) {
      result.matrix[a * d + a] += 1.0;
      for (std::size_t b = a + 1; b < d; ++b) {
        if (norm[a] == 0.0 || norm[b] == 0.0) continue;
        double cov = 0.0;
        for (std::size_t t = 0; t < steps; ++t) cov += centered[t * d + a] * centered[t * d + b];
        const double r = std::clamp(cov / (norm[a] * norm[b]), -1.0, 1.0);
        result.matrix[a * d + b] += r;
        result.matrix[b * d + a] += r;
      }
    }
  }
  result.matrix *= 1.0 / static_cast<double>(cells);
  return result;
}

CorrelationResult compute_correlation(const GridSeries& series) { return compute_correlation(series.values()); }

LagPairs shifted_trend(const GridSeries& series, std::size_t row, std::size_t col, std::string_view feature,
                       std::size_t lag) {
  if (row >= series.rows() || col >= series.cols()) {
    throw DomainError("cell (" + std::to_string(row) + ", " + std::to_string(col) + ") outside the grid");
  }
  if (lag < 1 || lag >= series.steps()) {
    throw DomainError("lag must satisfy 1 <= lag < T (T = " + std::to_string(series.steps()) + ")");
  }
  const std::size_t k = series.feature_index(feature);
  LagPairs pairs;
  for (std::size_t t = lag; t < series.steps(); ++t) {
    pairs.current.push_back(series.at(t, k, row, col));
    pairs.lagged.push_back(series.at(t - lag, k, row, col));
  }
  return pairs;
}

}  // namespace forecast::datastore
