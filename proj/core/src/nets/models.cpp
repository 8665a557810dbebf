#include "forecast/nets/models.hpp"

#include "forecast/errors.hpp"

namespace forecast::nets {

namespace {

Var frame_at(const Var& inputs, std::size_t t) {
  const auto& s = inputs.shape();
  return ag::reshape(ag::slice(inputs, 1, t, 1), {s[0], s[2], s[3], s[4]});
}

Var zeros(std::size_t batch, std::size_t channels, std::size_t rows, std::size_t cols) {
  return ag::constant(Tensor({batch, channels, rows, cols}));
}

}  // namespace

Var target_frames(const Var& inputs, std::size_t target_feature) {
  const auto& s = inputs.shape();
  return ag::reshape(ag::slice(inputs, 2, target_feature, 1), {s[0], s[1], s[3], s[4]});
}

void ForecastModel::check_inputs(const Var& inputs, std::size_t target_feature) const {
  const auto& s = inputs.shape();
  if (s.size() != 5) throw GraphError("model input must be [B, T, d, M, N], got " + shape_string(s));
  if (s[1] != input_steps()) {
    throw GraphError("model expects " + std::to_string(input_steps()) + " input steps, got " + std::to_string(s[1]));
  }
  if (target_feature >= s[2]) throw GraphError("target feature index out of range");
  if (config_.kind == ModelKind::WeatherModel && s[2] != config_.features) {
    throw GraphError("model was built for " + std::to_string(config_.features) + " features, input has " +
                     std::to_string(s[2]));
  }
}

// ---- Weather Model ------------------------------------------------------------

WeatherModel::WeatherModel(ModelConfig config) : ForecastModel(std::move(config)) {
  config_.kind = ModelKind::WeatherModel;
  validate(config_);
  std::mt19937_64 rng(config_.init_seed);
  const auto& c = config_;
  attention_ = std::make_unique<Attention>(params_, "attention", c.features, c.t_in, c.encoder_hidden.front(),
                                           c.attention_q, c.attention_kernel, c.softmax_axis, rng);
  for (std::size_t k = 0; k < c.encoder_hidden.size(); ++k) {
    const std::size_t in = k == 0 ? c.features : c.encoder_hidden[k - 1];
    encoder_.emplace_back(params_, "encoder." + std::to_string(k), in, c.encoder_hidden[k], c.encoder_kernels[k], rng);
  }
  for (std::size_t k = 0; k < c.decoder_hidden.size(); ++k) {
    const std::size_t in = k == 0 ? c.output_channels : c.decoder_hidden[k - 1];
    decoder_.emplace_back(params_, "decoder." + std::to_string(k), in, c.decoder_hidden[k], c.decoder_kernels[k], rng);
  }
  output_ = std::make_unique<OutputConv>(params_, "output", c.decoder_hidden.back(), c.output_mid_channels,
                                         c.output_channels, c.output_kernel, rng);
}

EncoderHistory WeatherModel::encode(const Var& inputs) const {
  const auto& s = inputs.shape();
  const std::size_t batch = s[0], steps = s[1], rows = s[3], cols = s[4];
  const Var window = attention_->window_term(inputs);
  std::vector<LayerState> states;
  for (const auto& cell : encoder_) states.push_back(cell.zero_state(batch, rows, cols));

  EncoderHistory history;
  history.layers.resize(encoder_.size());
  for (std::size_t t = 0; t < steps; ++t) {
    const Var weights = attention_->weights(attention_->energies(window, states.front().h));
    history.attention.push_back(weights);
    Var x = apply_attention(weights, frame_at(inputs, t));
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
      states[k] = encoder_[k].step(x, states[k]);
      history.layers[k].push_back(states[k]);
      x = states[k].h;
    }
  }
  return history;
}

std::vector<LayerState> WeatherModel::context_match(const EncoderHistory& history) const {
  const std::size_t layers = history.layers.size();
  std::vector<LayerState> out(layers);
  for (std::size_t k = 0; k < layers; ++k) {
    std::vector<Var> hs, ss;
    for (const auto& state : history.layers[k]) {
      hs.push_back(state.h);
      ss.push_back(state.s);
    }
    out[layers - 1 - k] = {ag::add_n(hs), ag::add_n(ss)};
  }
  return out;
}

Var WeatherModel::decode(std::vector<LayerState> states, const Var& seed, std::size_t t_out) const {
  if (t_out < 1) throw GraphError("decode needs T_out >= 1");
  if (states.size() != decoder_.size()) throw GraphError("decoder state count does not match decoder depth");
  std::vector<Var> frames;
  Var input = seed;
  for (std::size_t t = 0; t < t_out; ++t) {
    Var x = input;
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      states[k] = decoder_[k].step(x, states[k]);
      x = states[k].h;
    }
    input = (*output_)(x);
    frames.push_back(input);
  }
  return ag::concat(frames, 1);
}

ModelOutput WeatherModel::forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) {
  check_inputs(inputs, target_feature);
  const EncoderHistory history = encode(inputs);
  const auto& s = inputs.shape();
  const Var seed = ag::slice(frame_at(inputs, s[1] - 1), 1, target_feature, 1);
  ModelOutput out{decode(context_match(history), seed, t_out), std::nullopt};
  Tensor maps({s[0], s[1], s[2], s[3], s[4]});
  const std::size_t per_step = s[2] * s[3] * s[4];
  for (std::size_t t = 0; t < s[1]; ++t) {
    const Tensor& a = history.attention[t].value();
    for (std::size_t b = 0; b < s[0]; ++b)
      std::copy(a.raw() + b * per_step, a.raw() + (b + 1) * per_step, maps.raw() + (b * s[1] + t) * per_step);
  }
  out.attention = std::move(maps);
  return out;
}

// ---- ConvLSTM baseline ---------------------------------------------------------

ConvLSTMBaseline::ConvLSTMBaseline(ModelConfig config) : ForecastModel(std::move(config)) {
  config_.kind = ModelKind::ConvLSTM;
  validate(config_);
  std::mt19937_64 rng(config_.init_seed);
  const auto& hidden = config_.convlstm_hidden;
  const auto& kernels = config_.convlstm_kernels;
  const std::size_t layers = hidden.size();
  for (std::size_t k = 0; k < layers; ++k) {
    encoder_.emplace_back(params_, "encoder." + std::to_string(k), k == 0 ? 1 : hidden[k - 1], hidden[k], kernels[k],
                          rng);
  }
  std::size_t head_in = 0;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t mirrored = layers - 1 - k;
    const std::size_t in = k == 0 ? 1 : hidden[mirrored + 1];
    decoder_.emplace_back(params_, "decoder." + std::to_string(k), in, hidden[mirrored], kernels[mirrored], rng);
    head_in += hidden[mirrored];
  }
  head_w_ = &params_.add("head.w", fan_in_uniform({1, head_in, 1, 1}, head_in, rng));
  head_b_ = &params_.add("head.b", fan_in_uniform({1}, head_in, rng));
}

ModelOutput ConvLSTMBaseline::forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) {
  check_inputs(inputs, target_feature);
  if (t_out < 1) throw GraphError("decode needs T_out >= 1");
  const Var frames = target_frames(inputs, target_feature);
  const std::size_t batch = frames.dim(0), steps = frames.dim(1), rows = frames.dim(2), cols = frames.dim(3);

  std::vector<LayerState> states;
  for (const auto& cell : encoder_) states.push_back(cell.zero_state(batch, rows, cols));
  for (std::size_t t = 0; t < steps; ++t) {
    Var x = ag::slice(frames, 1, t, 1);
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
      states[k] = encoder_[k].step(x, states[k]);
      x = states[k].h;
    }
  }
  std::vector<LayerState> dec(states.rbegin(), states.rend());
  const Var blank = zeros(batch, 1, rows, cols);
  std::vector<Var> predictions;
  for (std::size_t t = 0; t < t_out; ++t) {
    Var x = blank;
    std::vector<Var> hidden;
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      dec[k] = decoder_[k].step(x, dec[k]);
      x = dec[k].h;
      hidden.push_back(x);
    }
    predictions.push_back(ag::conv2d(ag::concat(hidden, 1), head_w_->var(), head_b_->var()));
  }
  return {ag::concat(predictions, 1), std::nullopt};
}

// ---- U-Net ------------------------------------------------------------------------

UNet::Block UNet::make_block(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Block b{};
  b.w1 = &params_.add(prefix + ".w1", fan_in_uniform({out, in, 3, 3}, in * 9, rng));
  b.b1 = &params_.add(prefix + ".b1", fan_in_uniform({out}, in * 9, rng));
  b.w2 = &params_.add(prefix + ".w2", fan_in_uniform({out, out, 3, 3}, out * 9, rng));
  b.b2 = &params_.add(prefix + ".b2", fan_in_uniform({out}, out * 9, rng));
  return b;
}

Var UNet::run_block(const Block& block, const Var& x) const {
  const Var y = ag::relu(ag::conv2d(x, block.w1->var(), block.b1->var()));
  return ag::relu(ag::conv2d(y, block.w2->var(), block.b2->var()));
}

UNet::UNet(ModelConfig config) : ForecastModel(std::move(config)) {
  config_.kind = ModelKind::UNet;
  validate(config_);
  std::mt19937_64 rng(config_.init_seed);
  const std::size_t base = config_.unet_base_channels, depth = config_.unet_depth;
  std::size_t in = config_.t_in;
  for (std::size_t level = 0; level < depth; ++level) {
    const std::size_t width = base << level;
    down_.push_back(make_block("down." + std::to_string(level), in, width, rng));
    in = width;
  }
  bottom_ = make_block("bottom", in, base << depth, rng);
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t level = depth - 1 - i;
    const std::size_t wide = base << (level + 1), width = base << level;
    const std::string name = "up." + std::to_string(level);
    up_w_.push_back(&params_.add(name + ".tw", fan_in_uniform({wide, width, 2, 2}, wide * 4, rng)));
    up_b_.push_back(&params_.add(name + ".tb", fan_in_uniform({width}, wide * 4, rng)));
    up_.push_back(make_block(name, 2 * width, width, rng));
  }
  head_w_ = &params_.add("head.w", fan_in_uniform({config_.t_out, base, 1, 1}, base, rng));
  head_b_ = &params_.add("head.b", fan_in_uniform({config_.t_out}, base, rng));
}

Var UNet::forward_frames(const Var& frames) const {
  const std::size_t rows = frames.dim(2), cols = frames.dim(3);
  const std::size_t multiple = std::size_t{1} << config_.unet_depth;
  const auto round_up = [multiple](std::size_t n) { return (n + multiple - 1) / multiple * multiple; };
  Var x = frames;
  if (round_up(rows) != rows || round_up(cols) != cols) x = ag::reflect_pad(x, round_up(rows) - rows, round_up(cols) - cols);

  std::vector<Var> skips;
  for (const auto& block : down_) {
    x = run_block(block, x);
    skips.push_back(x);
    x = ag::max_pool2(x);
  }
  x = run_block(bottom_, x);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    x = ag::conv_transpose2x2(x, up_w_[i]->var(), up_b_[i]->var());
    x = run_block(up_[i], ag::concat({skips[skips.size() - 1 - i], x}, 1));
  }
  x = ag::conv2d(x, head_w_->var(), head_b_->var());
  return ag::crop(x, rows, cols);
}

ModelOutput UNet::forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) {
  check_inputs(inputs, target_feature);
  if (t_out != config_.t_out) {
    throw GraphError("U-Net emits exactly " + std::to_string(config_.t_out) + " frames, " + std::to_string(t_out) +
                     " requested");
  }
  return {forward_frames(target_frames(inputs, target_feature)), std::nullopt};
}

// ---- SMA ----------------------------------------------------------------------------

SMA::SMA(ModelConfig config) : ForecastModel(std::move(config)) {
  config_.kind = ModelKind::SMA;
  validate(config_);
  std::mt19937_64 rng(config_.init_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor w({config_.sma_window});
  for (double& v : w.data()) v = unit(rng);
  weights_ = &params_.add("window", std::move(w));
}

Var SMA::forward_frames(const Var& frames, std::size_t t_out) const {
  const std::size_t length = frames.dim(1);
  if (length != config_.sma_window) throw GraphError("SMA window length mismatch");
  if (t_out < 1) throw GraphError("SMA needs T_out >= 1");
  if (weights_->value().sum() == 0.0) throw DomainError("SMA weights sum to zero; prediction undefined");
  Var window = frames;
  std::vector<Var> predictions;
  for (std::size_t t = 0; t < t_out; ++t) {
    const Var y = ag::weighted_average(window, weights_->var());
    predictions.push_back(y);
    window = length == 1 ? y : ag::concat({ag::slice(window, 1, 1, length - 1), y}, 1);
  }
  return ag::concat(predictions, 1);
}

ModelOutput SMA::forward(const Var& inputs, std::size_t target_feature, std::size_t t_out) {
  check_inputs(inputs, target_feature);
  return {forward_frames(target_frames(inputs, target_feature), t_out), std::nullopt};
}

std::unique_ptr<ForecastModel> make_model(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::WeatherModel:
      return std::make_unique<WeatherModel>(config);
    case ModelKind::ConvLSTM:
      return std::make_unique<ConvLSTMBaseline>(config);
    case ModelKind::UNet:
      return std::make_unique<UNet>(config);
    case ModelKind::SMA:
      return std::make_unique<SMA>(config);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace forecast::nets
