#include "forecast/nets/layers.hpp"

#include <cmath>

#include "forecast/errors.hpp"

namespace forecast::nets {

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ConvLSTMCell::ConvLSTMCell(ag::ParameterSet& params, const std::string& prefix, std::size_t in_channels,
                           std::size_t hidden, std::size_t kernel, std::mt19937_64& rng)
    : in_(in_channels), hidden_(hidden), kernel_(kernel) {
  if (in_channels == 0 || hidden == 0 || kernel % 2 == 0) {
    throw ConfigError("ConvLSTM layer '" + prefix + "' needs positive channels and an odd kernel");
  }
  // one fan-in for both kernels: they feed the same pre-activation
  const std::size_t fan_in = (in_channels + hidden) * kernel * kernel;
  wx_ = &params.add(prefix + ".wx", fan_in_uniform({4 * hidden, in_channels, kernel, kernel}, fan_in, rng));
  wh_ = &params.add(prefix + ".wh", fan_in_uniform({4 * hidden, hidden, kernel, kernel}, fan_in, rng));
  b_ = &params.add(prefix + ".b", fan_in_uniform({4 * hidden}, fan_in, rng));
}

LayerState ConvLSTMCell::zero_state(std::size_t batch, std::size_t height, std::size_t width) const {
  const Tensor zeros({batch, hidden_, height, width});
  return {ag::constant(zeros), ag::constant(zeros)};
}

LayerState ConvLSTMCell::step(const Var& x, const LayerState& previous) const {
  if (x.value().rank() != 4 || x.dim(1) != in_) {
    throw GraphError("ConvLSTM step expects [B, " + std::to_string(in_) + ", H, W], got " + shape_string(x.shape()));
  }
  const Var gates = ag::add(ag::conv2d(x, wx_->var(), b_->var()), ag::conv2d(previous.h, wh_->var()));
  const Var i = ag::sigmoid(ag::slice(gates, 1, 0, hidden_));
  const Var f = ag::sigmoid(ag::slice(gates, 1, hidden_, hidden_));
  const Var o = ag::sigmoid(ag::slice(gates, 1, 2 * hidden_, hidden_));
  const Var candidate = ag::tanh(ag::slice(gates, 1, 3 * hidden_, hidden_));
  const Var s = ag::add(ag::mul(f, previous.s), ag::mul(i, candidate));
  return {ag::mul(o, ag::tanh(s)), s};
}

Attention::Attention(ag::ParameterSet& params, const std::string& prefix, std::size_t features, std::size_t t_in,
                     std::size_t hidden, std::size_t q, std::size_t kernel, SoftmaxAxis axis, std::mt19937_64& rng)
    : features_(features), t_in_(t_in), q_(q), axis_(axis) {
  if (features == 0 || t_in == 0 || hidden == 0 || q == 0 || kernel % 2 == 0) {
    throw ConfigError("attention needs positive sizes and an odd kernel");
  }
  const std::size_t kk = kernel * kernel;
  w_e_ = &params.add(prefix + ".w_e", fan_in_uniform({q, hidden, kernel, kernel}, (hidden + t_in) * kk, rng));
  u_e_ = &params.add(prefix + ".u_e", fan_in_uniform({q, t_in, kernel, kernel}, (hidden + t_in) * kk, rng));
  v_e_ = &params.add(prefix + ".v_e", fan_in_uniform({1, q, kernel, kernel}, q * kk, rng));
}

Var Attention::window_term(const Var& window) const {
  const auto& s = window.shape();
  if (s.size() != 5 || s[1] != t_in_ || s[2] != features_) {
    throw GraphError("attention window expects [B, " + std::to_string(t_in_) + ", " + std::to_string(features_) +
                     ", M, N], got " + shape_string(s));
  }
  const Var per_feature = ag::reshape(ag::swap_axes12(window), {s[0] * s[2], s[1], s[3], s[4]});
  return ag::conv2d(per_feature, u_e_->var());
}

Var Attention::energies(const Var& window_term, const Var& h_prev) const {
  const std::size_t batch = h_prev.dim(0), rows = h_prev.dim(2), cols = h_prev.dim(3);
  if (window_term.dim(0) != batch * features_ || window_term.dim(1) != q_) {
    throw GraphError("attention window term " + shape_string(window_term.shape()) + " does not match state " +
                     shape_string(h_prev.shape()));
  }
  const Var hidden_term = ag::tile_batch(ag::conv2d(h_prev, w_e_->var()), features_);
  const Var e = ag::conv2d(ag::tanh(ag::add(hidden_term, window_term)), v_e_->var());
  return ag::reshape(e, {batch, features_, rows, cols});
}

Var Attention::weights(const Var& energies) const {
  return axis_ == SoftmaxAxis::Feature ? ag::softmax_channels(energies) : ag::softmax_spatial(energies);
}

Var apply_attention(const Var& weights, const Var& x) { return ag::mul(weights, x); }

OutputConv::OutputConv(ag::ParameterSet& params, const std::string& prefix, std::size_t in_channels,
                       std::size_t mid, std::size_t out, std::size_t kernel, std::mt19937_64& rng) {
  if (in_channels == 0 || mid == 0 || out == 0 || kernel % 2 == 0) {
    throw ConfigError("output convolution needs positive channels and an odd kernel");
  }
  const std::size_t kk = kernel * kernel;
  w1_ = &params.add(prefix + ".w1", fan_in_uniform({mid, in_channels, kernel, kernel}, in_channels * kk, rng));
  b1_ = &params.add(prefix + ".b1", fan_in_uniform({mid}, in_channels * kk, rng));
  w2_ = &params.add(prefix + ".w2", fan_in_uniform({out, mid, kernel, kernel}, mid * kk, rng));
  b2_ = &params.add(prefix + ".b2", fan_in_uniform({out}, mid * kk, rng));
}

Var OutputConv::operator()(const Var& x) const {
  return ag::conv2d(ag::tanh(ag::conv2d(x, w1_->var(), b1_->var())), w2_->var(), b2_->var());
}

}  // namespace forecast::nets
