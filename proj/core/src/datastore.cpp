#include "forecast/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "forecast/errors.hpp"

namespace forecast::datastore {

GridGeometry GridGeometry::regular(std::size_t rows, std::size_t cols, double lat0, double lon0, double dlat,
                                   double dlon) {
  GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.lat.resize(rows * cols);
  g.lon.resize(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      g.lat[i * cols + j] = lat0 + dlat * static_cast<double>(i);
      g.lon[i * cols + j] = lon0 + dlon * static_cast<double>(j);
    }
  return g;
}

void validate_geometry(const GridGeometry& g) {
  if (g.lat.size() != g.rows * g.cols || g.lon.size() != g.rows * g.cols) {
    throw IngestError("coordinate grids do not match " + std::to_string(g.rows) + "x" + std::to_string(g.cols));
  }
  for (std::size_t j = 0; j < g.cols && g.rows > 1; ++j) {
    const double sign = g.lat_at(1, j) - g.lat_at(0, j) > 0 ? 1.0 : -1.0;
    for (std::size_t i = 1; i < g.rows; ++i) {
      if (!((g.lat_at(i, j) - g.lat_at(i - 1, j)) * sign > 0)) {
        throw IngestError("latitude not strictly monotone in column " + std::to_string(j));
      }
    }
  }
  for (std::size_t i = 0; i < g.rows && g.cols > 1; ++i) {
    const double sign = g.lon_at(i, 1) - g.lon_at(i, 0) > 0 ? 1.0 : -1.0;
    for (std::size_t j = 1; j < g.cols; ++j) {
      if (!((g.lon_at(i, j) - g.lon_at(i, j - 1)) * sign > 0)) {
        throw IngestError("longitude not strictly monotone in row " + std::to_string(i));
      }
    }
  }
}

GridSeries::GridSeries(Tensor values, std::vector<FeatureInfo> features, GridGeometry geometry, TimePoint start,
                       Duration step)
    : values_(std::move(values)),
      features_(std::move(features)),
      geometry_(std::move(geometry)),
      start_(start),
      step_(step) {
  if (values_.rank() != 4) throw IngestError("grid values must be [T, d, M, N], got " + shape_string(values_.shape()));
  const auto& s = values_.shape();
  if (s[0] < 1 || s[1] < 1) throw IngestError("grid needs T >= 1 and d >= 1, got " + shape_string(s));
  if (s[2] < 3 || s[3] < 3) throw IngestError("grid needs M, N >= 3, got " + shape_string(s));
  if (features_.size() != s[1]) throw IngestError("feature table size does not match d");
  if (geometry_.rows != s[2] || geometry_.cols != s[3]) throw IngestError("geometry does not match grid extent");
  if (step_.count() <= 0 && s[0] > 1) throw IngestError("time step must be positive");
  validate_geometry(geometry_);
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      const std::size_t n = s[3], mn = s[2] * n, dmn = s[1] * mn;
      throw IngestError("non-finite value at index [t=" + std::to_string(i / dmn) +
                        ", feature=" + std::to_string(i % dmn / mn) + ", row=" + std::to_string(i % mn / n) +
                        ", col=" + std::to_string(i % n) + "]");
    }
  }
}

std::size_t GridSeries::feature_index(std::string_view name) const {
  for (std::size_t k = 0; k < features_.size(); ++k)
    if (features_[k].name == name) return k;
  throw SchemaError("unknown feature '" + std::string(name) + "'");
}

// ---- windows ------------------------------------------------------------------

Tensor SampleWindow::inputs() const {
  const GridSeries& s = *source;
  const std::size_t frame = s.feature_count() * s.rows() * s.cols();
  Tensor out({t_in, s.feature_count(), s.rows(), s.cols()});
  const double* begin = s.values().raw() + (anchor + 1 - t_in) * frame;
  std::copy(begin, begin + t_in * frame, out.raw());
  return out;
}

Tensor SampleWindow::targets() const {
  const GridSeries& s = *source;
  const std::size_t plane = s.rows() * s.cols();
  Tensor out({t_out, s.rows(), s.cols()});
  for (std::size_t t = 0; t < t_out; ++t) {
    const double* p = s.plane(anchor + 1 + t, target_feature);
    std::copy(p, p + plane, out.raw() + t * plane);
  }
  return out;
}

std::vector<SampleWindow> make_windows(std::shared_ptr<const GridSeries> series, std::size_t t_in,
                                       std::size_t t_out, std::string_view target_feature) {
  if (t_in < 1 || t_out < 1) throw WindowingError("T_in and T_out must be >= 1");
  const std::size_t target = series->feature_index(target_feature);
  const std::size_t total = series->steps();
  if (total < t_in + t_out) {
    throw WindowingError("series of " + std::to_string(total) + " steps is shorter than T_in + T_out = " +
                         std::to_string(t_in + t_out));
  }
  std::vector<SampleWindow> out;
  out.reserve(total - t_in - t_out + 1);
  for (std::size_t anchor = t_in - 1; anchor + t_out < total; ++anchor) {
    out.push_back(SampleWindow{series, anchor, t_in, t_out, target});
  }
  return out;
}

std::vector<SampleWindow> make_windows_for_targets(std::shared_ptr<const GridSeries> series, std::size_t t_in,
                                                   std::size_t t_out, std::size_t target_feature,
                                                   IndexRange targets, std::size_t history_floor) {
  if (t_in < 1 || t_out < 1) throw WindowingError("T_in and T_out must be >= 1");
  if (targets.end > series->steps()) throw WindowingError("target range exceeds series length");
  std::vector<SampleWindow> out;
  // first target frame anchor + 1 >= targets.begin; first input anchor + 1 - t_in >= history_floor
  const std::size_t first = std::max(targets.begin, history_floor + t_in) - 1;
  for (std::size_t anchor = first; anchor + t_out < targets.end; ++anchor) {
    out.push_back(SampleWindow{series, anchor, t_in, t_out, target_feature});
  }
  return out;
}

// ---- batches and normalization ----------------------------------------------

BatchTensors stack_windows(const std::vector<SampleWindow>& windows) {
  if (windows.empty()) throw WindowingError("cannot stack an empty window list");
  const SampleWindow& first = windows.front();
  const GridSeries& s = *first.source;
  const std::size_t b = windows.size();
  BatchTensors out;
  out.target_feature = first.target_feature;
  out.inputs = Tensor({b, first.t_in, s.feature_count(), s.rows(), s.cols()});
  out.targets = Tensor({b, first.t_out, s.rows(), s.cols()});
  const std::size_t in_size = first.t_in * s.feature_count() * s.rows() * s.cols();
  const std::size_t out_size = first.t_out * s.rows() * s.cols();
  for (std::size_t i = 0; i < b; ++i) {
    const SampleWindow& w = windows[i];
    if (w.t_in != first.t_in || w.t_out != first.t_out || w.target_feature != first.target_feature ||
        w.source->feature_count() != s.feature_count() || w.source->rows() != s.rows() ||
        w.source->cols() != s.cols()) {
      throw WindowingError("windows in a batch must share (T_in, T_out, d, M, N)");
    }
    Tensor in = w.inputs();
    Tensor tg = w.targets();
    std::copy(in.raw(), in.raw() + in_size, out.inputs.raw() + i * in_size);
    std::copy(tg.raw(), tg.raw() + out_size, out.targets.raw() + i * out_size);
  }
  return out;
}

NormalizationRecord compute_record(const BatchTensors& raw) {
  const auto& s = raw.inputs.shape();
  const std::size_t b = s[0], t_in = s[1], d = s[2], plane = s[3] * s[4];
  NormalizationRecord rec;
  rec.target_feature = raw.target_feature;
  rec.min.assign(d, std::numeric_limits<double>::infinity());
  rec.max.assign(d, -std::numeric_limits<double>::infinity());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t t = 0; t < t_in; ++t)
      for (std::size_t k = 0; k < d; ++k) {
        const double* p = raw.inputs.raw() + (((n * t_in + t) * d + k) * plane);
        const auto [lo, hi] = std::minmax_element(p, p + plane);
        rec.min[k] = std::min(rec.min[k], *lo);
        rec.max[k] = std::max(rec.max[k], *hi);
      }
  if (!raw.targets.empty()) {
    const auto [lo, hi] = std::minmax_element(raw.targets.data().begin(), raw.targets.data().end());
    rec.min[raw.target_feature] = std::min(rec.min[raw.target_feature], *lo);
    rec.max[raw.target_feature] = std::max(rec.max[raw.target_feature], *hi);
  }
  rec.degenerate.resize(d);
  for (std::size_t k = 0; k < d; ++k) rec.degenerate[k] = !(rec.max[k] > rec.min[k]);
  return rec;
}

NormalizationRecord compute_record(const std::vector<SampleWindow>& windows) {
  if (windows.empty()) throw WindowingError("cannot normalize an empty window list");
  const std::size_t d = windows.front().source->feature_count();
  NormalizationRecord rec;
  rec.target_feature = windows.front().target_feature;
  rec.min.assign(d, std::numeric_limits<double>::infinity());
  rec.max.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto& w : windows) {
    const GridSeries& s = *w.source;
    if (s.feature_count() != d) throw WindowingError("windows in a batch must share (T_in, T_out, d, M, N)");
    const std::size_t plane = s.rows() * s.cols();
    for (std::size_t t = w.anchor + 1 - w.t_in; t <= w.anchor + w.t_out; ++t)
      for (std::size_t k = 0; k < d; ++k) {
        const double* p = s.plane(t, k);
        const auto [lo, hi] = std::minmax_element(p, p + plane);
        rec.min[k] = std::min(rec.min[k], *lo);
        rec.max[k] = std::max(rec.max[k], *hi);
      }
  }
  rec.degenerate.resize(d);
  for (std::size_t k = 0; k < d; ++k) rec.degenerate[k] = !(rec.max[k] > rec.min[k]);
  return rec;
}

BatchTensors apply_record(BatchTensors raw, const NormalizationRecord& record) {
  const auto& s = raw.inputs.shape();
  const std::size_t frames = s[0] * s[1], d = s[2], plane = s[3] * s[4];
  if (record.min.size() != d) throw WindowingError("normalization record does not match feature count");
  auto map_plane = [&](double* p, std::size_t k) {
    if (record.degenerate[k]) {
      std::fill(p, p + plane, 0.0);
      return;
    }
    const double lo = record.min[k];
    const double range = record.max[k] - lo;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - lo) / range;
  };
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t k = 0; k < d; ++k) map_plane(raw.inputs.raw() + (f * d + k) * plane, k);
  const std::size_t target_frames = raw.targets.size() / plane;
  for (std::size_t f = 0; f < target_frames; ++f) map_plane(raw.targets.raw() + f * plane, record.target_feature);
  return raw;
}

NormalizedBatch normalize_batch(BatchTensors raw) {
  NormalizationRecord record = compute_record(raw);
  return {apply_record(std::move(raw), record), std::move(record)};
}

std::vector<Batch> assemble_batches(std::vector<SampleWindow> windows, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw WindowingError("batch size must be >= 1");
  if (windows.empty()) throw WindowingError("no windows to batch");
  // Fisher-Yates on raw engine output so the order is fixed by the seed alone.
  std::mt19937_64 rng(seed);
  for (std::size_t i = windows.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(windows[i], windows[j]);
  }
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    Batch batch;
    batch.windows.assign(windows.begin() + static_cast<std::ptrdiff_t>(begin),
                         windows.begin() + static_cast<std::ptrdiff_t>(end));
    batch.norm = compute_record(batch.windows);
    out.push_back(std::move(batch));
  }
  return out;
}

BatchTensors materialize(const Batch& batch) { return apply_record(stack_windows(batch.windows), batch.norm); }

Tensor denormalize(const Tensor& values, const NormalizationRecord& record, std::size_t feature) {
  if (feature >= record.min.size()) throw DenormalizationError("feature index out of range");
  if (record.is_degenerate(feature)) {
    throw DenormalizationError("feature " + std::to_string(feature) + " has a degenerate (constant) record");
  }
  Tensor out = values;
  const double lo = record.min[feature];
  const double range = record.range(feature);
  for (double& v : out.data()) v = v * range + lo;
  return out;
}

double denormalize(double value, const NormalizationRecord& record, std::size_t feature) {
  return denormalize(Tensor({1}, {value}), record, feature)[0];
}

}  // namespace forecast::datastore
