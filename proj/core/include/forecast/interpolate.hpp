#pragma once

// Station-to-grid inverse distance weighting with per-(time, feature)
// leave-one-out power selection.

#include <array>
#include <span>
#include <vector>

#include "forecast/datastore.hpp"
#include "forecast/tensor.hpp"

namespace forecast::interpolate {

inline constexpr double kEarthRadiusKm = 6371.0;
/// Distances below this are exact hits; avoids overflow in d^-p.
inline constexpr double kExactHitKm = 1e-9;
inline constexpr double kFallbackPower = 2.0;

using LatLon = std::array<double, 2>;

/// Great-circle distance in km. Throws DomainError for |lat| > 90 or |lon| > 360.
double haversine(LatLon a, LatLon b);

/// Row-major [cells, stations] distances, cell index i * N + j.
struct DistanceMatrix {
  std::size_t cells = 0;
  std::size_t stations = 0;
  std::vector<double> km;

  double at(std::size_t cell, std::size_t station) const { return km[cell * stations + station]; }
  std::span<const double> row(std::size_t cell) const { return {km.data() + cell * stations, stations}; }
};

DistanceMatrix distance_matrix(const std::vector<LatLon>& stations, const datastore::GridGeometry& grid);
DistanceMatrix distance_matrix(const datastore::StationSeries& stations, const datastore::GridGeometry& grid);
/// Station-to-station distances [n, n] used for leave-one-out selection.
DistanceMatrix station_distances(const std::vector<LatLon>& stations);

/// Inverse-distance-weighted estimate. A (near-)zero distance returns that
/// station's value, first index winning ties. Throws InterpolationError when empty.
double idw(std::span<const double> values, std::span<const double> distances, double power);

/// Picks the candidate power minimizing mean leave-one-out squared error;
/// ties go to the earliest candidate. `pairwise` is [n, n] row-major.
/// With a single station the fallback power is returned and a warning logged.
double loocv_power(std::span<const double> values, std::span<const double> pairwise,
                   std::span<const double> candidates);

/// Selected exponents [T, d].
struct PowerMatrix {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<double> power;

  double at(std::size_t t, std::size_t k) const { return power[t * features + k]; }
};

struct InterpolationResult {
  datastore::GridSeries grid;
  PowerMatrix powers;
};

inline const std::vector<double> kDefaultCandidates{1.0, 2.0, 3.0, 4.0, 5.0};

/// Fills every grid cell for every (t, feature) slice. NaN station readings
/// are excluded per slice; a slice with no valid station throws InterpolationError.
InterpolationResult interpolate_series(const datastore::StationSeries& stations,
                                       const datastore::GridGeometry& grid,
                                       const std::vector<double>& candidates = kDefaultCandidates);

}  // namespace forecast::interpolate
