#pragma once

// Run configuration for the command-line tool: a JSON document whose
// sections override built-in defaults. Unknown keys are rejected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forecast/datastore.hpp"
#include "forecast/nets/config.hpp"
#include "forecast/trainer.hpp"

namespace forecast::cli {

struct DataConfig {
  std::filesystem::path grid;           // binary or netCDF grid
  std::filesystem::path stations;       // station CSV
  std::filesystem::path grid_template;  // grid file whose geometry receives interpolated values
  std::string format = "auto";
  std::vector<std::string> features;
  std::string target = "temperature";
  std::optional<double> station_step_hours;
  std::optional<datastore::SynthConfig> synthetic;  // used when no grid path is given
};

struct SplitConfig {
  std::string mode = "calendar";  // calendar | steps
  int window_months = 24;
  int stride_months = 6;
  std::size_t window_steps = 0;
  std::size_t stride_steps = 0;
  datastore::SplitFractions fractions;
  std::size_t max_experiments = 0;  // 0 keeps every window
};

struct PlotConfig {
  bool enabled = true;
  std::size_t pixel_scale = 8;    // pixels per grid cell
  std::size_t quiver_stride = 2;  // draw every k-th flow vector
};

struct FlowConfig {
  std::size_t max_frames = 10;
  double scale = 2.0;      // factor for the positive-scaling transform
  std::uint64_t seed = 0;  // sign pattern for the sign-flip transform
};

struct EdaConfig {
  std::array<std::size_t, 2> cell{0, 0};
  std::vector<std::size_t> lags{1, 8};
  std::string feature;  // empty: the target
};

struct PredictConfig {
  std::size_t experiment = 0;
  std::string split = "test";  // train | val | test
  std::size_t sample = 0;
};

struct RunConfig {
  DataConfig data;
  std::vector<std::string> models{"weather_model"};
  std::map<std::string, nets::ModelConfig> model_configs;  // one per entry of `models`
  trainer::TrainConfig train;
  std::size_t t_out = 10;
  SplitConfig splits;
  PlotConfig plots;
  FlowConfig flow;
  EdaConfig eda;
  PredictConfig predict;
  std::vector<double> candidates{1, 2, 3, 4, 5};
  std::filesystem::path output_dir = "runs/latest";
  std::filesystem::path run_dir;  // trained run read by evaluate / predict / plot; empty = output_dir
  std::uint64_t seed = 0;
};

struct Overrides {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::filesystem::path> run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
};

/// Environment variable naming the root for relative data paths.
inline constexpr const char* kDataRootEnv = "FORECAST_DATA_ROOT";

/// Parses `text`, applies command-line overrides and resolves relative data
/// paths against $FORECAST_DATA_ROOT, or else `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const Overrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Effective configuration in the same schema `parse_run_config` reads.
std::string to_json(const RunConfig& config);

}  // namespace forecast::cli
