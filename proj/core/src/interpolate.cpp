#include "forecast/interpolate.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>

#include "forecast/errors.hpp"

namespace forecast::interpolate {

namespace {

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

void check_coordinate(LatLon p) {
  if (!(std::abs(p[0]) <= 90.0) || !(std::abs(p[1]) <= 360.0)) {
    throw DomainError("coordinate out of range: (" + std::to_string(p[0]) + ", " + std::to_string(p[1]) + ")");
  }
}

// Mean squared leave-one-out error for one power over the listed stations.
double loo_error(std::span<const double> values, std::span<const double> pairwise, std::size_t n, double power,
                 std::vector<double>& scratch_values, std::vector<double>& scratch_dist) {
  double error = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    scratch_values.clear();
    scratch_dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      scratch_values.push_back(values[j]);
      scratch_dist.push_back(pairwise[i * n + j]);
    }
    const double estimate = idw(scratch_values, scratch_dist, power);
    error += (values[i] - estimate) * (values[i] - estimate);
  }
  return error / static_cast<double>(n);
}

}  // namespace

double haversine(LatLon a, LatLon b) {
  check_coordinate(a);
  check_coordinate(b);
  const double dlat = radians(b[0] - a[0]);
  const double dlon = radians(b[1] - a[1]);
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(radians(a[0])) * std::cos(radians(b[0])) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

DistanceMatrix distance_matrix(const std::vector<LatLon>& stations, const datastore::GridGeometry& grid) {
  DistanceMatrix out;
  out.cells = grid.rows * grid.cols;
  out.stations = stations.size();
  out.km.resize(out.cells * out.stations);
  for (std::size_t c = 0; c < out.cells; ++c) {
    const LatLon cell{grid.lat[c], grid.lon[c]};
    for (std::size_t s = 0; s < out.stations; ++s) out.km[c * out.stations + s] = haversine(cell, stations[s]);
  }
  return out;
}

DistanceMatrix distance_matrix(const datastore::StationSeries& stations, const datastore::GridGeometry& grid) {
  return distance_matrix(std::vector<LatLon>(stations.locations.begin(), stations.locations.end()), grid);
}

DistanceMatrix station_distances(const std::vector<LatLon>& stations) {
  DistanceMatrix out;
  out.cells = stations.size();
  out.stations = stations.size();
  out.km.resize(out.cells * out.stations);
  for (std::size_t a = 0; a < stations.size(); ++a)
    for (std::size_t b = 0; b < stations.size(); ++b) out.km[a * out.stations + b] = haversine(stations[a], stations[b]);
  return out;
}

double idw(std::span<const double> values, std::span<const double> distances, double power) {
  if (values.empty()) throw InterpolationError("idw needs at least one station");
  if (values.size() != distances.size()) throw InterpolationError("idw: values and distances differ in length");
  if (!(power > 0.0)) throw InterpolationError("idw power must be positive");
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (distances[i] < 0.0) throw InterpolationError("idw: negative distance");
    if (distances[i] < kExactHitKm) return values[i];
  }
  // Weights are scaled by the nearest distance so large powers do not underflow.
  double nearest = distances[0];
  for (double d : distances) nearest = std::min(nearest, d);
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = std::pow(nearest / distances[i], power);
    numerator += w * values[i];
    denominator += w;
  }
  return numerator / denominator;
}

double loocv_power(std::span<const double> values, std::span<const double> pairwise,
                   std::span<const double> candidates) {
  if (candidates.empty()) throw InterpolationError("no candidate powers");
  const std::size_t n = values.size();
  if (n == 0) throw InterpolationError("loocv needs at least one station");
  if (pairwise.size() != n * n) throw InterpolationError("pairwise distance matrix does not match station count");
  if (n == 1) {
    spdlog::warn("leave-one-out undefined for a single station; using power {}", kFallbackPower);
    return kFallbackPower;
  }
  std::vector<double> scratch_values, scratch_dist;
  double best_power = candidates[0];
  double best_error = loo_error(values, pairwise, n, candidates[0], scratch_values, scratch_dist);
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double error = loo_error(values, pairwise, n, candidates[c], scratch_values, scratch_dist);
    if (error < best_error) {
      best_error = error;
      best_power = candidates[c];
    }
  }
  return best_power;
}

InterpolationResult interpolate_series(const datastore::StationSeries& stations,
                                       const datastore::GridGeometry& grid, const std::vector<double>& candidates) {
  const std::size_t steps = stations.steps(), d = stations.feature_count(), n = stations.station_count();
  const std::size_t cells = grid.rows * grid.cols;
  const std::vector<LatLon> locations(stations.locations.begin(), stations.locations.end());
  const DistanceMatrix to_cells = distance_matrix(locations, grid);
  const DistanceMatrix pairwise = station_distances(locations);

  PowerMatrix powers{steps, d, std::vector<double>(steps * d)};
  Tensor values({steps, d, grid.rows, grid.cols});
  std::vector<std::size_t> valid;
  std::vector<double> slice_values, slice_pairwise, cell_dist;
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < d; ++k) {
      valid.clear();
      for (std::size_t s = 0; s < n; ++s)
        if (std::isfinite(stations.at(t, k, s))) valid.push_back(s);
      if (valid.empty()) {
        throw InterpolationError("no valid station value at t=" + std::to_string(t) + ", feature '" +
                                 stations.features[k].name + "'");
      }
      const std::size_t m = valid.size();
      slice_values.resize(m);
      slice_pairwise.resize(m * m);
      for (std::size_t a = 0; a < m; ++a) {
        slice_values[a] = stations.at(t, k, valid[a]);
        for (std::size_t b = 0; b < m; ++b) slice_pairwise[a * m + b] = pairwise.at(valid[a], valid[b]);
      }
      const double p = loocv_power(slice_values, slice_pairwise, candidates);
      powers.power[t * d + k] = p;
      cell_dist.resize(m);
      double* out = values.raw() + (t * d + k) * cells;
      for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t a = 0; a < m; ++a) cell_dist[a] = to_cells.at(c, valid[a]);
        out[c] = idw(slice_values, cell_dist, p);
      }
    }

  return {datastore::GridSeries(std::move(values), stations.features, grid, stations.start, stations.step),
          std::move(powers)};
}

}  // namespace forecast::interpolate
