#pragma once

#include <memory>
#include <optional>

#include "forecast/autograd.hpp"
#include "forecast/nets/config.hpp"
#include "forecast/nets/layers.hpp"

namespace forecast::nets {

struct ModelOutput {
  Var predictions;                 // [B, T_out, M, N]
  std::optional<Tensor> attention;  // [B, T_in, d, M, N], Weather Model only
};

struct EncoderHistory {
  // per layer, one state per input step
  std::vector<std::vector<LayerState>> layers;
  std::vector<Var> attention;  // per step [B, d, M, N]
};

class ForecastModel {
 public:
  explicit ForecastModel(ModelConfig config) : config_(std::move(config)) {}
  virtual ~ForecastModel() = default;
  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;

  /// inputs: normalized [B, input_steps, d, M, N]. Produces `t_out` frames of
  /// the target feature.
  virtual ModelOutput forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) = 0;
  ModelOutput forward(const Var& inputs, std::size_t target_feature) {
    return forward(inputs, target_feature, config_.t_out);
  }

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  std::size_t input_steps() const { return config_.input_steps(); }
  ag::ParameterSet& parameters() { return params_; }
  const ag::ParameterSet& parameters() const { return params_; }

 protected:
  void check_inputs(const Var& inputs, std::size_t target_feature) const;

  ModelConfig config_;
  ag::ParameterSet params_;
};

/// Attention-weighted ConvLSTM encoder, context matcher and recursive decoder.
class WeatherModel final : public ForecastModel {
 public:
  explicit WeatherModel(ModelConfig config);

  ModelOutput forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) override;
  using ForecastModel::forward;

  EncoderHistory encode(const Var& inputs) const;
  /// Decoder initial states: the time-sum of each encoder layer, layer order reversed.
  std::vector<LayerState> context_match(const EncoderHistory& history) const;
  /// Recursive decoding seeded with `seed` [B, 1, M, N]; returns [B, t_out, M, N].
  Var decode(std::vector<LayerState> states, const Var& seed, std::size_t t_out) const;

  const Attention& attention() const { return *attention_; }
  const std::vector<ConvLSTMCell>& encoder() const { return encoder_; }
  const std::vector<ConvLSTMCell>& decoder() const { return decoder_; }
  const OutputConv& output_conv() const { return *output_; }

 private:
  std::vector<ConvLSTMCell> encoder_;
  std::vector<ConvLSTMCell> decoder_;
  std::unique_ptr<Attention> attention_;
  std::unique_ptr<OutputConv> output_;
};

/// Encoder-decoder ConvLSTM on the target feature alone. The decoder starts from
/// the final encoder states (layer order reversed), is fed zero frames, and a
/// 1x1 convolution over all decoder hidden states produces each frame.
class ConvLSTMBaseline final : public ForecastModel {
 public:
  explicit ConvLSTMBaseline(ModelConfig config);
  ModelOutput forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) override;
  using ForecastModel::forward;

 private:
  std::vector<ConvLSTMCell> encoder_;
  std::vector<ConvLSTMCell> decoder_;
  ag::Parameter* head_w_;
  ag::Parameter* head_b_;
};

/// Time steps as channels: T_in target frames in, T_out frames out. Grids are
/// reflect-padded up to a multiple of 2^depth and cropped back.
class UNet final : public ForecastModel {
 public:
  explicit UNet(ModelConfig config);
  ModelOutput forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) override;
  using ForecastModel::forward;

  /// [B, T_in, M, N] -> [B, T_out, M, N]
  Var forward_frames(const Var& frames) const;

 private:
  struct Block {
    ag::Parameter* w1;
    ag::Parameter* b1;
    ag::Parameter* w2;
    ag::Parameter* b2;
  };
  Block make_block(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Var run_block(const Block& block, const Var& x) const;

  std::vector<Block> down_;
  Block bottom_{};
  std::vector<ag::Parameter*> up_w_;
  std::vector<ag::Parameter*> up_b_;
  std::vector<Block> up_;
  ag::Parameter* head_w_;
  ag::Parameter* head_b_;
};

/// Trainable weighted moving average over the trailing window; each prediction
/// is appended to the window for the next step.
class SMA final : public ForecastModel {
 public:
  explicit SMA(ModelConfig config);
  ModelOutput forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) override;
  using ForecastModel::forward;

  /// [B, L, M, N] target frames -> [B, t_out, M, N]
  Var forward_frames(const Var& frames, std::size_t t_out) const;
  ag::Parameter& weights() { return *weights_; }

 private:
  ag::Parameter* weights_;
};

std::unique_ptr<ForecastModel> make_model(const ModelConfig& config);

/// Slices the target feature out of [B, T, d, M, N] as [B, T, M, N].
Var target_frames(const Var& inputs, std::size_t target_feature);

}  // namespace forecast::nets
