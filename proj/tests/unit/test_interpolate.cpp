#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "forecast/errors.hpp"
#include "forecast/interpolate.hpp"

using namespace forecast::interpolate;
namespace ds = forecast::datastore;

namespace {

// Direct evaluation with unscaled 1/d^p weights.
double oracle_idw(const std::vector<double>& v, const std::vector<double>& d, double p) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] == 0.0) return v[i];
  double num = 0, den = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += v[i] / std::pow(d[i], p);
    den += 1.0 / std::pow(d[i], p);
  }
  return num / den;
}

// Exhaustive leave-one-out search written against the oracle above.
double oracle_loocv(const std::vector<double>& v, const std::vector<double>& pairwise,
                    const std::vector<double>& candidates) {
  const std::size_t n = v.size();
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
    // mathematically tied candidates can differ in the last bits here
    if (err < best_err * (1 - 1e-12)) {
      best_err = err;
      best = p;
    }
  }
  return best;
}

ds::StationSeries stations_from(const std::vector<LatLon>& where, const std::vector<std::vector<double>>& values) {
  ds::StationSeries s;
  const std::size_t steps = values.size(), n = where.size();
  s.values = forecast::Tensor({steps, 1, n});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < n; ++i) s.values[t * n + i] = values[t][i];
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back("s" + std::to_string(i));
  s.features = {{"temperature", "K"}};
  s.locations.assign(where.begin(), where.end());
  s.start = ds::parse_iso8601("2000-01-01");
  s.step = std::chrono::hours(3);
  return s;
}

}  // namespace

TEST(Haversine, IdenticalAndAntipodal) {
  EXPECT_EQ(haversine({12.5, 40.0}, {12.5, 40.0}), 0.0);
  EXPECT_NEAR(haversine({0, 0}, {0, 180}), std::numbers::pi * 6371.0, 1e-9);
  EXPECT_NEAR(haversine({0, 0}, {0, 180}), 20015.09, 0.01);
  EXPECT_THROW(haversine({91, 0}, {0, 0}), forecast::DomainError);
}

TEST(DistanceMatrix, ShapesAndSpotEntries) {
  const auto one = distance_matrix(std::vector<LatLon>{{10, 20}}, ds::GridGeometry::regular(1, 1, 10, 20, 1, 1));
  EXPECT_EQ(one.km, std::vector<double>{0.0});
  const std::vector<LatLon> st{{40, 25}, {41.3, 26.1}, {39.2, 27}};
  const auto grid = ds::GridGeometry::regular(2, 2, 40, 25, 0.5, 0.5);
  const auto d = distance_matrix(st, grid);
  EXPECT_EQ(d.cells, 4u);
  EXPECT_EQ(d.stations, 3u);
  EXPECT_EQ(d.at(3, 1), haversine({40.5, 25.5}, {41.3, 26.1}));
  EXPECT_EQ(d.at(0, 0), 0.0);
  for (double v : d.km) EXPECT_GE(v, 0.0);
}

TEST(Idw, Examples) {
  EXPECT_EQ(idw(std::vector<double>{1.0, 9.5}, std::vector<double>{3.0, 0.0}, 2), 9.5);
  EXPECT_EQ(idw(std::vector<double>{4.25}, std::vector<double>{17.0}, 3.7), 4.25);
  EXPECT_DOUBLE_EQ(idw(std::vector<double>{2, 8}, std::vector<double>{1, 2}, 1), 4.0);
  EXPECT_THROW(idw(std::vector<double>{}, std::vector<double>{}, 2), forecast::InterpolationError);
}

TEST(Idw, ExactHitFirstIndexWins) {
  EXPECT_EQ(idw(std::vector<double>{5, 3, 7}, std::vector<double>{1, 0, 0}, 2), 3.0);
  EXPECT_EQ(idw(std::vector<double>{5, 3}, std::vector<double>{1, 1e-10}, 2), 3.0);
}

TEST(Idw, PropertiesOnRandomInstances) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> val(-40, 40), dist(0.5, 300), pow(0.5, 6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 7;
    std::vector<double> v(n), d(n);
    for (auto& x : v) x = val(rng);
    for (auto& x : d) x = dist(rng);
    const double p = pow(rng);
    const double out = idw(v, d, p);
    EXPECT_NEAR(out, oracle_idw(v, d, p), 1e-9 * (1 + std::abs(out)));
    EXPECT_GE(out, *std::min_element(v.begin(), v.end()) - 1e-12);
    EXPECT_LE(out, *std::max_element(v.begin(), v.end()) + 1e-12);
    std::vector<double> scaled = d, shifted = v;
    for (auto& x : scaled) x *= 7.3;
    for (auto& x : shifted) x += 11.0;
    EXPECT_NEAR(idw(v, scaled, p), out, 1e-9 * (1 + std::abs(out)));
    EXPECT_NEAR(idw(shifted, d, p), out + 11.0, 1e-9 * (1 + std::abs(out)));
  }
}

TEST(Idw, LargePowerApproachesNearest) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> val(-10, 10);
  for (int trial = 0; trial < 50; ++trial) {
    // well separated: nearest at 10 km, the rest at least 15 km
    std::vector<double> v{val(rng), val(rng), val(rng), val(rng)};
    std::vector<double> d{15.0 + trial, 10.0, 30.0, 16.0};
    EXPECT_NEAR(idw(v, d, 64), v[1], 1e-3);
  }
}

TEST(Loocv, SingletonCandidateAndTies) {
  const std::vector<double> pairwise{0, 1, 2, 1, 0, 1, 2, 1, 0};
  EXPECT_EQ(loocv_power(std::vector<double>{1, 5, 2}, pairwise, std::vector<double>{2}), 2.0);
  EXPECT_EQ(loocv_power(std::vector<double>{3, 3}, std::vector<double>{0, 4, 4, 0}, kDefaultCandidates), 1.0);
}

TEST(Loocv, SingleStationFallsBack) {
  EXPECT_EQ(loocv_power(std::vector<double>{7}, std::vector<double>{0}, kDefaultCandidates), kFallbackPower);
}

TEST(Loocv, LinearFieldOnALineMatchesOracle) {
  // stations at km 0, 1, 3, 6, 10 along a line, value = 2 * position
  const std::vector<double> pos{0, 1, 3, 6, 10};
  std::vector<double> v, pairwise;
  for (double a : pos) {
    v.push_back(2 * a);
    for (double b : pos) pairwise.push_back(std::abs(a - b));
  }
  const double p = loocv_power(v, pairwise, kDefaultCandidates);
  EXPECT_EQ(p, oracle_loocv(v, pairwise, kDefaultCandidates));
}

TEST(Loocv, RandomInstancesMatchOracle) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> lat(38, 42), lon(20, 30), val(260, 300);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 5;
    std::vector<LatLon> where(n);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      where[i] = {lat(rng), lon(rng)};
      v[i] = val(rng);
    }
    const auto pairwise = station_distances(where);
    const double p = loocv_power(v, pairwise.km, kDefaultCandidates);
    EXPECT_EQ(p, oracle_loocv(v, pairwise.km, kDefaultCandidates)) << "trial " << trial;
    EXPECT_NE(std::find(kDefaultCandidates.begin(), kDefaultCandidates.end(), p), kDefaultCandidates.end());
  }
}

TEST(InterpolateSeries, OneStationGivesConstantGrid) {
  const auto st = stations_from({{40.3, 25.2}}, {{281.0}, {283.5}});
  const auto r = interpolate_series(st, ds::GridGeometry::regular(3, 4, 41, 24, -0.5, 0.5));
  for (std::size_t c = 0; c < 12; ++c) {
    EXPECT_EQ(r.grid.plane(0, 0)[c], 281.0);
    EXPECT_EQ(r.grid.plane(1, 0)[c], 283.5);
  }
  EXPECT_EQ(r.powers.at(0, 0), kFallbackPower);
}

TEST(InterpolateSeries, StationAtCellCenterIsExact) {
  const auto grid = ds::GridGeometry::regular(3, 3, 41, 24, -0.5, 0.5);
  const auto st = stations_from({{40.5, 24.5}, {41.7, 23.0}, {39.2, 26.0}}, {{290.0, 280.0, 270.0}});
  const auto r = interpolate_series(st, grid);
  EXPECT_EQ(r.grid.at(0, 0, 1, 1), 290.0);
}

TEST(InterpolateSeries, ConvexBoundAndPowersFromCandidates) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> val(-5, 5);
  const auto st = stations_from({{40.1, 24.3}, {41.9, 25.6}, {39.4, 26.2}},
                                {{val(rng), val(rng), val(rng)}, {val(rng), val(rng), val(rng)}});
  const auto r = interpolate_series(st, ds::GridGeometry::regular(4, 4, 42, 23.5, -0.8, 0.9));
  ASSERT_EQ(r.grid.values().shape(), (forecast::Shape{2, 1, 4, 4}));
  for (std::size_t t = 0; t < 2; ++t) {
    double lo = 1e9, hi = -1e9;
    for (std::size_t s = 0; s < 3; ++s) {
      lo = std::min(lo, st.at(t, 0, s));
      hi = std::max(hi, st.at(t, 0, s));
    }
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_GE(r.grid.plane(t, 0)[c], lo - 1e-12);
      EXPECT_LE(r.grid.plane(t, 0)[c], hi + 1e-12);
    }
    const double p = r.powers.at(t, 0);
    EXPECT_TRUE(p == 1 || p == 2 || p == 3 || p == 4 || p == 5);
  }
}

TEST(InterpolateSeries, NanStationsExcludedPerSlice) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto grid = ds::GridGeometry::regular(3, 3, 41, 24, -0.5, 0.5);
  const auto st = stations_from({{40.5, 24.5}, {41.7, 23.0}}, {{nan, 5.0}, {7.0, nan}});
  const auto r = interpolate_series(st, grid);
  for (std::size_t c = 0; c < 9; ++c) {
    EXPECT_EQ(r.grid.plane(0, 0)[c], 5.0);
    EXPECT_EQ(r.grid.plane(1, 0)[c], 7.0);
  }
  const auto empty = stations_from({{40.5, 24.5}}, {{1.0}, {nan}});
  EXPECT_THROW(interpolate_series(empty, grid), forecast::InterpolationError);
}
