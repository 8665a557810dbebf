#include "forecast/nets/config.hpp"

#include <json.hpp>

#include "forecast/errors.hpp"

namespace forecast::nets {

using nlohmann::json;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::WeatherModel:
      return "weather_model";
    case ModelKind::ConvLSTM:
      return "convlstm";
    case ModelKind::UNet:
      return "unet";
    case ModelKind::SMA:
      return "sma";
  }
  return "unknown";
}

std::string_view to_string(SoftmaxAxis axis) { return axis == SoftmaxAxis::Feature ? "feature" : "spatial"; }

ModelKind parse_model_kind(std::string_view name) {
  for (auto kind : {ModelKind::WeatherModel, ModelKind::ConvLSTM, ModelKind::UNet, ModelKind::SMA})
    if (to_string(kind) == name) return kind;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected weather_model, convlstm, unet or sma)");
}

SoftmaxAxis parse_softmax_axis(std::string_view name) {
  if (name == "feature") return SoftmaxAxis::Feature;
  if (name == "spatial") return SoftmaxAxis::Spatial;
  throw ConfigError("softmax_axis must be 'feature' or 'spatial', got '" + std::string(name) + "'");
}

ModelConfig default_model_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  return c;
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  auto positive = [&](const std::vector<std::size_t>& v, const char* name) {
    if (v.empty()) fail(std::string(name) + " must not be empty");
    for (auto x : v)
      if (x == 0) fail(std::string(name) + " entries must be positive");
  };
  auto odd = [&](const std::vector<std::size_t>& v, const char* name) {
    for (auto x : v)
      if (x % 2 == 0) fail(std::string(name) + " entries must be odd");
  };
  if (c.features == 0) fail("features must be >= 1");
  if (c.t_in == 0 || c.t_out == 0) fail("t_in and t_out must be >= 1");
  switch (c.kind) {
    case ModelKind::WeatherModel: {
      positive(c.encoder_hidden, "encoder_hidden");
      positive(c.decoder_hidden, "decoder_hidden");
      odd(c.encoder_kernels, "encoder_kernels");
      odd(c.decoder_kernels, "decoder_kernels");
      const std::size_t layers = c.encoder_hidden.size();
      if (c.decoder_hidden.size() != layers || c.encoder_kernels.size() != layers ||
          c.decoder_kernels.size() != layers) {
        fail("encoder/decoder hidden and kernel lists must have the same length");
      }
      if (!std::equal(c.encoder_hidden.begin(), c.encoder_hidden.end(), c.decoder_hidden.rbegin())) {
        fail("decoder_hidden must be encoder_hidden reversed");
      }
      if (c.attention_q == 0 || c.attention_kernel % 2 == 0) fail("attention_q must be positive, kernel odd");
      if (c.output_mid_channels == 0 || c.output_kernel % 2 == 0) fail("output convolution sizes invalid");
      if (c.output_channels != 1) fail("output_channels must be 1 for recursive decoding");
      break;
    }
    case ModelKind::ConvLSTM:
      positive(c.convlstm_hidden, "convlstm_hidden");
      odd(c.convlstm_kernels, "convlstm_kernels");
      if (c.convlstm_hidden.size() != c.convlstm_kernels.size()) fail("convlstm hidden/kernel lengths differ");
      break;
    case ModelKind::UNet:
      if (c.unet_base_channels == 0 || c.unet_depth == 0 || c.unet_depth > 6) fail("unet sizes invalid");
      break;
    case ModelKind::SMA:
      if (c.sma_window == 0) fail("sma_window must be >= 1");
      break;
  }
}

std::string to_json(const ModelConfig& c) {
  json j{
      {"kind", to_string(c.kind)},
      {"features", c.features},
      {"t_in", c.t_in},
      {"t_out", c.t_out},
      {"encoder_hidden", c.encoder_hidden},
      {"decoder_hidden", c.decoder_hidden},
      {"encoder_kernels", c.encoder_kernels},
      {"decoder_kernels", c.decoder_kernels},
      {"attention_q", c.attention_q},
      {"attention_kernel", c.attention_kernel},
      {"output_mid_channels", c.output_mid_channels},
      {"output_channels", c.output_channels},
      {"output_kernel", c.output_kernel},
      {"softmax_axis", to_string(c.softmax_axis)},
      {"convlstm_hidden", c.convlstm_hidden},
      {"convlstm_kernels", c.convlstm_kernels},
      {"unet_base_channels", c.unet_base_channels},
      {"unet_depth", c.unet_depth},
      {"sma_window", c.sma_window},
      {"init_seed", c.init_seed},
  };
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text, const ModelConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c = base;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") c.kind = parse_model_kind(value.get<std::string>());
      else if (key == "features") c.features = value.get<std::size_t>();
      else if (key == "t_in") c.t_in = value.get<std::size_t>();
      else if (key == "t_out") c.t_out = value.get<std::size_t>();
      else if (key == "encoder_hidden") c.encoder_hidden = value.get<std::vector<std::size_t>>();
      else if (key == "decoder_hidden") c.decoder_hidden = value.get<std::vector<std::size_t>>();
      else if (key == "encoder_kernels") c.encoder_kernels = value.get<std::vector<std::size_t>>();
      else if (key == "decoder_kernels") c.decoder_kernels = value.get<std::vector<std::size_t>>();
      else if (key == "attention_q") c.attention_q = value.get<std::size_t>();
      else if (key == "attention_kernel") c.attention_kernel = value.get<std::size_t>();
      else if (key == "output_mid_channels") c.output_mid_channels = value.get<std::size_t>();
      else if (key == "output_channels") c.output_channels = value.get<std::size_t>();
      else if (key == "output_kernel") c.output_kernel = value.get<std::size_t>();
      else if (key == "softmax_axis") c.softmax_axis = parse_softmax_axis(value.get<std::string>());
      else if (key == "convlstm_hidden") c.convlstm_hidden = value.get<std::vector<std::size_t>>();
      else if (key == "convlstm_kernels") c.convlstm_kernels = value.get<std::vector<std::size_t>>();
      else if (key == "unet_base_channels") c.unet_base_channels = value.get<std::size_t>();
      else if (key == "unet_depth") c.unet_depth = value.get<std::size_t>();
      else if (key == "sma_window") c.sma_window = value.get<std::size_t>();
      else if (key == "init_seed") c.init_seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config has a value of the wrong type: ") + e.what());
  }
  return c;
}

}  // namespace forecast::nets
