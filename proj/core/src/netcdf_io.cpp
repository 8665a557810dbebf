// CF-convention reader for netCDF-4 files, which are HDF5 containers: each
// variable is a dataset, attributes carry units / packing / fill values.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <optional>

#include "forecast/datastore.hpp"
#include "forecast/errors.hpp"

#ifdef FORECAST_HAVE_HDF5
#include <hdf5.h>
#endif

namespace forecast::datastore {

#ifdef FORECAST_HAVE_HDF5

namespace {

class Handle {
 public:
  Handle(hid_t id, herr_t (*close)(hid_t)) : id_(id), close_(close) {}
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (id_ >= 0) close_(id_);
  }
  hid_t get() const { return id_; }
  bool valid() const { return id_ >= 0; }

 private:
  hid_t id_;
  herr_t (*close_)(hid_t);
};

struct SilenceHdf5 {
  H5E_auto2_t func = nullptr;
  void* data = nullptr;
  SilenceHdf5() {
    H5Eget_auto2(H5E_DEFAULT, &func, &data);
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  }
  ~SilenceHdf5() { H5Eset_auto2(H5E_DEFAULT, func, data); }
};

bool has_dataset(hid_t file, const std::string& name) {
  return H5Lexists(file, name.c_str(), H5P_DEFAULT) > 0;
}

std::vector<hsize_t> dataset_dims(hid_t dataset) {
  Handle space(H5Dget_space(dataset), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  std::vector<hsize_t> dims(static_cast<std::size_t>(std::max(rank, 0)));
  if (rank > 0) H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
  return dims;
}

std::vector<double> read_doubles(hid_t file, const std::string& name, std::vector<hsize_t>* dims_out = nullptr) {
  Handle ds(H5Dopen2(file, name.c_str(), H5P_DEFAULT), H5Dclose);
  if (!ds.valid()) throw IngestError("cannot open variable '" + name + "'");
  auto dims = dataset_dims(ds.get());
  std::size_t n = 1;
  for (hsize_t d : dims) n *= static_cast<std::size_t>(d);
  std::vector<double> out(n);
  if (n && H5Dread(ds.get(), H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data()) < 0) {
    throw IngestError("failed to read variable '" + name + "'");
  }
  if (dims_out) *dims_out = std::move(dims);
  return out;
}

std::optional<double> numeric_attribute(hid_t file, const std::string& var, const char* attr) {
  if (H5Aexists_by_name(file, var.c_str(), attr, H5P_DEFAULT) <= 0) return std::nullopt;
  Handle a(H5Aopen_by_name(file, var.c_str(), attr, H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
  double value = 0.0;
  if (H5Aread(a.get(), H5T_NATIVE_DOUBLE, &value) < 0) return std::nullopt;
  return value;
}

std::optional<std::string> string_attribute(hid_t file, const std::string& var, const char* attr) {
  if (H5Aexists_by_name(file, var.c_str(), attr, H5P_DEFAULT) <= 0) return std::nullopt;
  Handle a(H5Aopen_by_name(file, var.c_str(), attr, H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
  Handle type(H5Aget_type(a.get()), H5Tclose);
  if (H5Tget_class(type.get()) != H5T_STRING) return std::nullopt;
  if (H5Tis_variable_str(type.get()) > 0) {
    char* buffer = nullptr;
    Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(mem.get(), H5T_VARIABLE);
    if (H5Aread(a.get(), mem.get(), &buffer) < 0 || !buffer) return std::nullopt;
    std::string s(buffer);
    H5free_memory(buffer);
    return s;
  }
  const std::size_t size = H5Tget_size(type.get());
  std::string s(size, '\0');
  if (H5Aread(a.get(), type.get(), s.data()) < 0) return std::nullopt;
  s.resize(std::strlen(s.c_str()));
  return s;
}

// "hours since 1900-01-01 00:00:00.0" -> (seconds per unit, epoch)
std::pair<double, TimePoint> parse_time_units(const std::string& units) {
  const auto since = units.find(" since ");
  if (since == std::string::npos) throw IngestError("unsupported time units '" + units + "'");
  const std::string unit = units.substr(0, since);
  double seconds = 0.0;
  if (unit == "seconds" || unit == "second" || unit == "s") {
    seconds = 1.0;
  } else if (unit == "minutes" || unit == "minute") {
    seconds = 60.0;
  } else if (unit == "hours" || unit == "hour" || unit == "h") {
    seconds = 3600.0;
  } else if (unit == "days" || unit == "day") {
    seconds = 86400.0;
  } else {
    throw IngestError("unsupported time unit '" + unit + "'");
  }
  std::string ref = units.substr(since + 7);
  for (char& c : ref)
    if (c == ' ') c = 'T';
  if (const auto dot = ref.find('.'); dot != std::string::npos) ref = ref.substr(0, dot);
  return {seconds, parse_iso8601(ref)};
}

std::string first_existing(hid_t file, std::initializer_list<std::string> names) {
  for (const auto& n : names)
    if (!n.empty() && has_dataset(file, n)) return n;
  return {};
}

}  // namespace

bool netcdf_supported() { return true; }

GridSeries read_grid_netcdf(const std::filesystem::path& path, const GridSchema& schema) {
  SilenceHdf5 quiet;
  if (H5Fis_hdf5(path.c_str()) <= 0) {
    throw IngestError("not a netCDF-4/HDF5 file (classic netCDF is not supported): " + path.string());
  }
  Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw IngestError("cannot open " + path.string());
  const hid_t f = file.get();

  const std::string time_var = first_existing(f, {schema.time_var, "time", "valid_time"});
  const std::string lat_var = first_existing(f, {schema.lat_var, "latitude", "lat"});
  const std::string lon_var = first_existing(f, {schema.lon_var, "longitude", "lon"});
  if (time_var.empty() || lat_var.empty() || lon_var.empty()) {
    throw SchemaError("grid file lacks time/latitude/longitude coordinate variables");
  }

  std::vector<hsize_t> lat_dims, lon_dims;
  const auto lat = read_doubles(f, lat_var, &lat_dims);
  const auto lon = read_doubles(f, lon_var, &lon_dims);
  GridGeometry geometry;
  if (lat_dims.size() == 1 && lon_dims.size() == 1) {
    geometry.rows = lat.size();
    geometry.cols = lon.size();
    geometry.lat.resize(geometry.rows * geometry.cols);
    geometry.lon.resize(geometry.rows * geometry.cols);
    for (std::size_t i = 0; i < geometry.rows; ++i)
      for (std::size_t j = 0; j < geometry.cols; ++j) {
        geometry.lat[i * geometry.cols + j] = lat[i];
        geometry.lon[i * geometry.cols + j] = lon[j];
      }
  } else if (lat_dims.size() == 2 && lat_dims == lon_dims) {
    geometry.rows = static_cast<std::size_t>(lat_dims[0]);
    geometry.cols = static_cast<std::size_t>(lat_dims[1]);
    geometry.lat = lat;
    geometry.lon = lon;
  } else {
    throw IngestError("latitude/longitude must both be 1-D or matching 2-D arrays");
  }

  const auto times = read_doubles(f, time_var);
  if (times.empty()) throw IngestError("empty time axis");
  const auto units = string_attribute(f, time_var, "units");
  if (!units) throw IngestError("time variable has no units attribute");
  const auto [unit_seconds, epoch] = parse_time_units(*units);
  const auto to_seconds = [&](double v) { return static_cast<std::int64_t>(std::llround(v * unit_seconds)); };
  const TimePoint start = epoch + Duration{to_seconds(times[0])};
  Duration step{0};
  if (times.size() > 1) {
    step = Duration{to_seconds(times[1]) - to_seconds(times[0])};
    if (step.count() <= 0) throw IngestError("time axis is not increasing");
    for (std::size_t t = 1; t < times.size(); ++t) {
      if (to_seconds(times[t]) - to_seconds(times[t - 1]) != step.count()) {
        throw IngestError("irregular time axis at index " + std::to_string(t));
      }
    }
  } else {
    step = std::chrono::hours(1);
  }

  std::vector<std::string> names = schema.features;
  if (names.empty()) {
    // every 3-D / 4-D variable that is not a coordinate
    H5G_info_t info{};
    H5Gget_info(f, &info);
    for (hsize_t i = 0; i < info.nlinks; ++i) {
      char buffer[256];
      H5Lget_name_by_idx(f, ".", H5_INDEX_NAME, H5_ITER_INC, i, buffer, sizeof(buffer), H5P_DEFAULT);
      const std::string name(buffer);
      if (name == time_var || name == lat_var || name == lon_var) continue;
      Handle ds(H5Dopen2(f, name.c_str(), H5P_DEFAULT), H5Dclose);
      if (!ds.valid()) continue;
      const auto dims = dataset_dims(ds.get());
      if (dims.size() == 3 || dims.size() == 4) names.push_back(name);
    }
  }
  if (names.empty()) throw SchemaError("grid file contains no data variables");

  const std::size_t steps = times.size(), rows = geometry.rows, cols = geometry.cols, plane = rows * cols;
  Tensor values({steps, names.size(), rows, cols});
  std::vector<FeatureInfo> features;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    if (!has_dataset(f, name)) throw SchemaError("grid file is missing declared feature '" + name + "'");
    std::vector<hsize_t> dims;
    const auto raw = read_doubles(f, name, &dims);
    const bool ok3 = dims.size() == 3 && dims[0] == steps && dims[1] == rows && dims[2] == cols;
    const bool ok4 = dims.size() == 4 && dims[0] == steps && dims[1] == 1 && dims[2] == rows && dims[3] == cols;
    if (!ok3 && !ok4) throw IngestError("variable '" + name + "' is not laid out as [time, (level=1,) lat, lon]");
    const double scale = numeric_attribute(f, name, "scale_factor").value_or(1.0);
    const double offset = numeric_attribute(f, name, "add_offset").value_or(0.0);
    const auto fill = numeric_attribute(f, name, "_FillValue");
    const auto missing = numeric_attribute(f, name, "missing_value");
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t c = 0; c < plane; ++c) {
        const double v = raw[t * plane + c];
        const bool absent = (fill && v == *fill) || (missing && v == *missing);
        values[(t * names.size() + k) * plane + c] =
            absent ? std::numeric_limits<double>::quiet_NaN() : v * scale + offset;
      }
    features.push_back({name, string_attribute(f, name, "units").value_or("")});
  }
  GridSeries series(std::move(values), std::move(features), std::move(geometry), start, step);
  if (!schema.target.empty()) series.feature_index(schema.target);
  return series;
}

#else

bool netcdf_supported() { return false; }

GridSeries read_grid_netcdf(const std::filesystem::path& path, const GridSchema&) {
  throw IngestError("netCDF support not compiled in; cannot read " + path.string());
}

#endif

}  // namespace forecast::datastore
