#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace forecast::nets {

enum class ModelKind { WeatherModel, ConvLSTM, UNet, SMA };
enum class SoftmaxAxis { Feature, Spatial };

std::string_view to_string(ModelKind kind);
std::string_view to_string(SoftmaxAxis axis);
/// Accepts weather_model | convlstm | unet | sma; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);
SoftmaxAxis parse_softmax_axis(std::string_view name);

struct ModelConfig {
  ModelKind kind = ModelKind::WeatherModel;
  std::size_t features = 1;  // d, filled in from the data
  std::size_t t_in = 10;
  std::size_t t_out = 10;

  // Weather Model
  std::vector<std::size_t> encoder_hidden{32, 32, 16};
  std::vector<std::size_t> decoder_hidden{16, 32, 32};
  std::vector<std::size_t> encoder_kernels{5, 3, 1};
  std::vector<std::size_t> decoder_kernels{3, 3, 1};
  std::size_t attention_q = 5;
  std::size_t attention_kernel = 3;
  std::size_t output_mid_channels = 5;
  std::size_t output_channels = 1;
  std::size_t output_kernel = 3;
  SoftmaxAxis softmax_axis = SoftmaxAxis::Feature;

  // ConvLSTM baseline; the decoder mirrors the encoder
  std::vector<std::size_t> convlstm_hidden{1, 16, 32};
  std::vector<std::size_t> convlstm_kernels{5, 3, 1};

  // U-Net
  std::size_t unet_base_channels = 64;
  std::size_t unet_depth = 4;

  // SMA
  std::size_t sma_window = 30;

  std::uint64_t init_seed = 0;

  /// The input window length the model consumes (SMA uses its own window).
  std::size_t input_steps() const { return kind == ModelKind::SMA ? sma_window : t_in; }
};

/// Paper defaults for each model family with T_in / T_out applied.
ModelConfig default_model_config(ModelKind kind);

/// Throws ConfigError on inconsistent settings (list lengths, symmetry, zero sizes).
void validate(const ModelConfig& config);

/// JSON round trip. Parsing starts from `base` and rejects unknown keys.
std::string to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json, const ModelConfig& base);

}  // namespace forecast::nets
