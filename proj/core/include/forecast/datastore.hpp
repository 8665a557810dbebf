#pragma once

// Gridded and station data containers, sliding windows, adaptive batch
// normalization, rolling experiment splits, exploratory statistics and a
// synthetic advection generator.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forecast/tensor.hpp"

namespace forecast::datastore {

using TimePoint = std::chrono::sys_seconds;
using Duration = std::chrono::seconds;

struct FeatureInfo {
  std::string name;
  std::string units;
};

/// Cell-center coordinates in degrees, row-major [rows * cols].
struct GridGeometry {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> lat;
  std::vector<double> lon;

  double lat_at(std::size_t i, std::size_t j) const { return lat[i * cols + j]; }
  double lon_at(std::size_t i, std::size_t j) const { return lon[i * cols + j]; }

  /// Regular lat/lon mesh; row 0 at `lat0`, column 0 at `lon0`.
  static GridGeometry regular(std::size_t rows, std::size_t cols, double lat0, double lon0, double dlat,
                              double dlon);
};

/// Throws IngestError unless lat is strictly monotone down every column and
/// lon strictly monotone along every row.
void validate_geometry(const GridGeometry& geometry);

/// Dense field [T, d, M, N] with coordinates and a regular time axis.
class GridSeries {
 public:
  GridSeries(Tensor values, std::vector<FeatureInfo> features, GridGeometry geometry, TimePoint start,
             Duration step);

  const Tensor& values() const { return values_; }
  std::size_t steps() const { return values_.dim(0); }
  std::size_t feature_count() const { return values_.dim(1); }
  std::size_t rows() const { return values_.dim(2); }
  std::size_t cols() const { return values_.dim(3); }

  const std::vector<FeatureInfo>& features() const { return features_; }
  /// Throws SchemaError for unknown names.
  std::size_t feature_index(std::string_view name) const;
  const GridGeometry& geometry() const { return geometry_; }
  TimePoint start_time() const { return start_; }
  Duration step() const { return step_; }
  TimePoint time_at(std::size_t t) const { return start_ + step_ * static_cast<std::int64_t>(t); }

  double at(std::size_t t, std::size_t k, std::size_t i, std::size_t j) const {
    return values_[((t * feature_count() + k) * rows() + i) * cols() + j];
  }
  /// Contiguous [M * N] plane of feature k at time t.
  const double* plane(std::size_t t, std::size_t k) const {
    return values_.raw() + (t * feature_count() + k) * rows() * cols();
  }

 private:
  Tensor values_;
  std::vector<FeatureInfo> features_;
  GridGeometry geometry_;
  TimePoint start_;
  Duration step_;
};

struct GapReport {
  std::size_t missing_rows = 0;   // (station, timestamp) pairs absent from the file
  std::size_t missing_values = 0;  // empty or NaN feature cells
};

/// Per-station series [T, d, n]; NaN marks a missing observation.
struct StationSeries {
  Tensor values;
  std::vector<std::string> ids;
  std::vector<FeatureInfo> features;
  std::vector<std::array<double, 2>> locations;  // (lat, lon) degrees
  TimePoint start;
  Duration step;
  GapReport gaps;

  std::size_t steps() const { return values.dim(0); }
  std::size_t feature_count() const { return values.dim(1); }
  std::size_t station_count() const { return values.dim(2); }
  double at(std::size_t t, std::size_t k, std::size_t s) const {
    return values[(t * feature_count() + k) * station_count() + s];
  }
};

/// Non-owning description of one (input, target) sample drawn from a series.
/// Inputs are frames [anchor - T_in + 1, anchor]; targets the target feature
/// at [anchor + 1, anchor + T_out].
struct SampleWindow {
  std::shared_ptr<const GridSeries> source;
  std::size_t anchor = 0;
  std::size_t t_in = 0;
  std::size_t t_out = 0;
  std::size_t target_feature = 0;

  TimePoint anchor_time() const { return source->time_at(anchor); }
  Tensor inputs() const;   // [T_in, d, M, N]
  Tensor targets() const;  // [T_out, M, N]
};

struct NormalizationRecord {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> degenerate;  // max == min for that feature
  std::size_t target_feature = 0;

  bool is_degenerate(std::size_t k) const { return degenerate.at(k); }
  double range(std::size_t k) const { return max.at(k) - min.at(k); }
};

/// Stacked tensors for a group of windows.
struct BatchTensors {
  Tensor inputs;   // [b, T_in, d, M, N]
  Tensor targets;  // [b, T_out, M, N]
  std::size_t target_feature = 0;

  std::size_t size() const { return inputs.dim(0); }
};

/// A group of windows plus the normalization record computed over all of them.
struct Batch {
  std::vector<SampleWindow> windows;
  NormalizationRecord norm;

  std::size_t size() const { return windows.size(); }
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct ExperimentWindow {
  std::size_t experiment_id = 0;
  IndexRange span;  // whole experiment window
  IndexRange train;
  IndexRange val;
  IndexRange test;
  std::optional<TimePoint> start_time;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorrelationResult {
  Tensor matrix;                         // [d, d]
  std::size_t zero_variance_entries = 0;  // (cell, feature) pairs with zero variance
};

struct LagPairs {
  std::vector<double> current;  // x_t for t = lag .. T-1
  std::vector<double> lagged;   // x_{t - lag}
};

// ---- windows and batches ----------------------------------------------------

/// All stride-1 windows: exactly T - T_in - T_out + 1 of them.
std::vector<SampleWindow> make_windows(std::shared_ptr<const GridSeries> series, std::size_t t_in,
                                       std::size_t t_out, std::string_view target_feature);

/// Windows whose targets all fall inside `targets` and whose inputs start at or
/// after `history_floor`. Used to evaluate every model on identical target frames.
std::vector<SampleWindow> make_windows_for_targets(std::shared_ptr<const GridSeries> series, std::size_t t_in,
                                                   std::size_t t_out, std::size_t target_feature,
                                                   IndexRange targets, std::size_t history_floor);

/// Stacks raw (unnormalized) window tensors.
BatchTensors stack_windows(const std::vector<SampleWindow>& windows);

/// Per-feature min/max over every window's full T_in + T_out extent.
NormalizationRecord compute_record(const std::vector<SampleWindow>& windows);
/// Same reduction over stacked tensors, which only carry the target feature
/// for the forecast frames.
NormalizationRecord compute_record(const BatchTensors& raw);
/// Applies a record; degenerate features map to 0.
BatchTensors apply_record(BatchTensors raw, const NormalizationRecord& record);

struct NormalizedBatch {
  BatchTensors tensors;
  NormalizationRecord record;
};
NormalizedBatch normalize_batch(BatchTensors raw);

/// Shuffles by seed, chunks into groups of `batch_size` (partial tail kept) and
/// computes each group's normalization record.
std::vector<Batch> assemble_batches(std::vector<SampleWindow> windows, std::size_t batch_size, std::uint64_t seed);

/// Normalized tensors for an assembled batch.
BatchTensors materialize(const Batch& batch);

/// x * (max - min) + min for feature `feature`; throws DenormalizationError when degenerate.
Tensor denormalize(const Tensor& values, const NormalizationRecord& record, std::size_t feature);
double denormalize(double value, const NormalizationRecord& record, std::size_t feature);

// ---- splits ----------------------------------------------------------------------

/// Splits a window of `length` steps starting at `begin` into train/val/test;
/// val and test are floored, the remainder goes to train.
ExperimentWindow split_window(std::size_t experiment_id, std::size_t begin, std::size_t length,
                              const SplitFractions& fractions);

/// Step-indexed rolling windows: starts at i * stride while start + window <= total.
std::vector<ExperimentWindow> rolling_splits(std::size_t total_steps, std::size_t window_steps,
                                             std::size_t stride_steps, const SplitFractions& fractions = {});

/// Calendar rolling windows over [span_start, span_end) sampled every `step`:
/// windows of `window` months advanced by `stride` months.
std::vector<ExperimentWindow> rolling_splits(TimePoint span_start, TimePoint span_end, Duration step,
                                             int window_months = 24, int stride_months = 6,
                                             const SplitFractions& fractions = {});

// ---- exploratory analysis ---------------------------------------------------------

/// Mean over cells of the per-cell Pearson correlation matrix; values [T, d, M, N].
CorrelationResult compute_correlation(const Tensor& values);
CorrelationResult compute_correlation(const GridSeries& series);

LagPairs shifted_trend(const GridSeries& series, std::size_t row, std::size_t col, std::string_view feature,
                       std::size_t lag);

// ---- synthetic data ---------------------------------------------------------------

struct SynthConfig {
  std::size_t rows = 16;
  std::size_t cols = 16;
  std::size_t steps = 400;
  std::size_t features = 3;
  std::uint64_t seed = 1;
  std::size_t blobs = 2;
  double speed = 0.5;                     // cells per step
  double turn_rate = 0.02;                // radians per step; rotates each blob's heading
  std::optional<double> heading;          // fixed initial heading (radians) for every blob
  std::optional<std::array<double, 2>> origin;  // fixed initial (row, col) for every blob
  double sigma = 2.0;                     // blob width in cells
  double noise = 0.0;                     // stddev of additive Gaussian noise
  Duration step = std::chrono::hours(3);
  TimePoint start = TimePoint{std::chrono::sys_days{std::chrono::year{2000} / 1 / 1}};
};

/// Gaussian blobs advected over a periodic domain. Feature 0 ("temperature")
/// is the target; feature k > 0 is an affine image of the target field k steps
/// ahead, with alternating sign, so every feature correlates with the target.
GridSeries synth_advection(const SynthConfig& config);
GridSeries synth_advection(std::size_t rows, std::size_t cols, std::size_t steps, std::size_t features,
                           std::uint64_t seed);

// ---- ingestion ----------------------------------------------------------------

struct GridSchema {
  std::vector<std::string> features;  // required, in output order; empty = all in file
  std::string target = "temperature";
  std::string format = "auto";        // auto | binary | netcdf
  // netCDF-4 / CF variable names
  std::string time_var = "time";
  std::string lat_var = "latitude";
  std::string lon_var = "longitude";
};

/// Reads a portable binary (`FCGRID01`) or CF netCDF-4 grid file.
GridSeries ingest_grid(const std::filesystem::path& path, const GridSchema& schema);

/// Portable binary grid format, little-endian:
///   magic "FCGRID01" | u32 version=1 | u32 T, d, M, N | i64 start (unix s) | i64 step (s)
///   | d x (u16 len, name bytes, u16 len, units bytes) | f64 lat[M*N] | f64 lon[M*N]
///   | f32 values[T][d][M][N]
void write_grid_binary(const GridSeries& series, const std::filesystem::path& path);
GridSeries read_grid_binary(const std::filesystem::path& path);

/// CF-style netCDF-4 (HDF5) reader; available when built with HDF5.
GridSeries read_grid_netcdf(const std::filesystem::path& path, const GridSchema& schema);
bool netcdf_supported();

/// Station CSV: header `station_id,lat,lon,timestamp,<feature>...`, ISO-8601
/// timestamps. `step` fixes the frequency; otherwise the smallest positive
/// spacing between timestamps is used.
StationSeries ingest_stations(const std::filesystem::path& path, std::optional<Duration> step = std::nullopt);

/// Parses `YYYY-MM-DD[THH:MM[:SS]][Z]`.
TimePoint parse_iso8601(std::string_view text);
std::string format_iso8601(TimePoint t);

}  // namespace forecast::datastore
