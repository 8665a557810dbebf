#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

namespace forecast::datastore {

namespace {

static_assert(std::endian::native == std::endian::little, "binary grid I/O assumes a little-endian host");

constexpr std::array<char, 8> kGridMagic{'F', 'C', 'G', 'R', 'I', 'D', '0', '1'};
constexpr std::uint32_t kGridVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IngestError("truncated grid file: " + path.string());
  }
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) throw IngestError("string too long for grid header");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto len = get<std::uint16_t>(in, path);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw IngestError("truncated grid header: " + path.string());
  return s;
}

bool has_binary_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> magic{};
  return in.read(magic.data(), magic.size()) && magic == kGridMagic;
}

// Reorders / subsets features to follow the schema.
GridSeries select_features(const GridSeries& series, const GridSchema& schema) {
  if (schema.features.empty()) {
    if (!schema.target.empty()) series.feature_index(schema.target);
    return series;
  }
  std::vector<std::size_t> order;
  for (const auto& name : schema.features) {
    bool found = false;
    for (std::size_t k = 0; k < series.feature_count(); ++k) {
      if (series.features()[k].name == name) {
        order.push_back(k);
        found = true;
        break;
      }
    }
    if (!found) throw SchemaError("grid file is missing declared feature '" + name + "'");
  }
  const std::size_t plane = series.rows() * series.cols();
  Tensor values({series.steps(), order.size(), series.rows(), series.cols()});
  std::vector<FeatureInfo> features;
  for (std::size_t k : order) features.push_back(series.features()[k]);
  for (std::size_t t = 0; t < series.steps(); ++t)
    for (std::size_t k = 0; k < order.size(); ++k) {
      const double* src = series.plane(t, order[k]);
      std::copy(src, src + plane, values.raw() + (t * order.size() + k) * plane);
    }
  GridSeries out(std::move(values), std::move(features), series.geometry(), series.start_time(), series.step());
  if (!schema.target.empty()) out.feature_index(schema.target);
  return out;
}

}  // namespace

void write_grid_binary(const GridSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open for writing: " + path.string());
  out.write(kGridMagic.data(), kGridMagic.size());
  put<std::uint32_t>(out, kGridVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(series.steps()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(series.feature_count()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(series.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(series.cols()));
  put<std::int64_t>(out, series.start_time().time_since_epoch().count());
  put<std::int64_t>(out, series.step().count());
  for (const auto& f : series.features()) {
    put_string(out, f.name);
    put_string(out, f.units);
  }
  for (double v : series.geometry().lat) put<double>(out, v);
  for (double v : series.geometry().lon) put<double>(out, v);
  for (double v : series.values().data()) put<float>(out, static_cast<float>(v));
  if (!out) throw IngestError("write failed: " + path.string());
}

GridSeries read_grid_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open grid file: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kGridMagic) {
    throw IngestError("not a portable grid file (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kGridVersion) throw IngestError("unsupported grid file version " + std::to_string(version));
  const std::size_t steps = get<std::uint32_t>(in, path);
  const std::size_t d = get<std::uint32_t>(in, path);
  const std::size_t rows = get<std::uint32_t>(in, path);
  const std::size_t cols = get<std::uint32_t>(in, path);
  const TimePoint start{Duration{get<std::int64_t>(in, path)}};
  const Duration step{get<std::int64_t>(in, path)};
  std::vector<FeatureInfo> features(d);
  for (auto& f : features) {
    f.name = get_string(in, path);
    f.units = get_string(in, path);
  }
  GridGeometry geometry;
  geometry.rows = rows;
  geometry.cols = cols;
  geometry.lat.resize(rows * cols);
  geometry.lon.resize(rows * cols);
  for (double& v : geometry.lat) v = get<double>(in, path);
  for (double& v : geometry.lon) v = get<double>(in, path);
  std::vector<float> raw(steps * d * rows * cols);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
    throw IngestError("truncated grid body: " + path.string());
  }
  Tensor values({steps, d, rows, cols});
  for (std::size_t i = 0; i < raw.size(); ++i) values[i] = static_cast<double>(raw[i]);
  return GridSeries(std::move(values), std::move(features), std::move(geometry), start, step);
}

GridSeries ingest_grid(const std::filesystem::path& path, const GridSchema& schema) {
  if (!std::filesystem::exists(path)) throw IngestError("grid file not found: " + path.string());
  std::string format = schema.format;
  if (format == "auto") format = has_binary_magic(path) ? "binary" : "netcdf";
  if (format == "binary") return select_features(read_grid_binary(path), schema);
  if (format == "netcdf") return read_grid_netcdf(path, schema);
  throw ConfigError("unknown grid format '" + schema.format + "'");
}

}  // namespace forecast::datastore
