#pragma once

// Checkpoint container:
//   "FCKPT001" | u64 header length | JSON header | float32 little-endian data
// The header holds the model config, every tensor's name, group, shape and
// element offset into the data block, and free-form metadata (optimizer
// counters, seeds, epoch).

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "forecast/nets/config.hpp"
#include "forecast/nets/models.hpp"
#include "forecast/tensor.hpp"

namespace forecast::nets {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Checkpoint {
  ModelConfig model;
  NamedTensors parameters;
  NamedTensors optimizer_state;
  std::string metadata = "{}";  // JSON object
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const ForecastModel& model);
/// Copies parameters by name; throws DataError on a missing name or shape mismatch.
void load_parameters(ForecastModel& model, const NamedTensors& parameters);
std::unique_ptr<ForecastModel> load_model(const std::filesystem::path& path);

}  // namespace forecast::nets
