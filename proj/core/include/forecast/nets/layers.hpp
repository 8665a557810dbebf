#pragma once

// Building blocks shared by the forecasting models. Activations are laid out
// [B, C, H, W]; every convolution is stride 1 with same padding.

#include <random>
#include <string>

#include "forecast/autograd.hpp"
#include "forecast/nets/config.hpp"

namespace forecast::nets {

using ag::Var;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = shape[1] * K * K.
Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

struct LayerState {
  Var h;
  Var s;
};

class ConvLSTMCell {
 public:
  /// Registers `<prefix>.wx` [4m, n, K, K], `<prefix>.wh` [4m, m, K, K] and
  /// `<prefix>.b` [4m]; gate blocks are ordered i, f, o, s.
  ConvLSTMCell(ag::ParameterSet& params, const std::string& prefix, std::size_t in_channels,
               std::size_t hidden, std::size_t kernel, std::mt19937_64& rng);

  LayerState zero_state(std::size_t batch, std::size_t height, std::size_t width) const;
  LayerState step(const Var& x, const LayerState& previous) const;

  std::size_t in_channels() const { return in_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t kernel() const { return kernel_; }

 private:
  std::size_t in_, hidden_, kernel_;
  ag::Parameter* wx_;
  ag::Parameter* wh_;
  ag::Parameter* b_;
};

/// Convolutional attention over the d input features.
///
/// For feature i the whole T_in window enters U_E as T_in channels, so
/// U_E * X^i is computed once per forward pass. Each step adds W_E * H, takes
/// tanh and reduces to a single energy channel with V_E.
class Attention {
 public:
  Attention(ag::ParameterSet& params, const std::string& prefix, std::size_t features, std::size_t t_in,
            std::size_t hidden, std::size_t q, std::size_t kernel, SoftmaxAxis axis, std::mt19937_64& rng);

  /// window [B, T_in, d, M, N] -> U_E * X^i for every (sample, feature): [B*d, Q, M, N].
  Var window_term(const Var& window) const;
  /// -> energies [B, d, M, N]
  Var energies(const Var& window_term, const Var& h_prev) const;
  /// Softmax over features (per cell) or over cells (per feature).
  Var weights(const Var& energies) const;

  std::size_t features() const { return features_; }
  SoftmaxAxis axis() const { return axis_; }

 private:
  std::size_t features_, t_in_, q_;
  SoftmaxAxis axis_;
  ag::Parameter* w_e_;
  ag::Parameter* u_e_;
  ag::Parameter* v_e_;
};

/// Elementwise product of attention weights and inputs.
Var apply_attention(const Var& weights, const Var& x);

/// [B, m, M, N] -> conv -> tanh -> conv -> [B, out, M, N]
class OutputConv {
 public:
  OutputConv(ag::ParameterSet& params, const std::string& prefix, std::size_t in_channels, std::size_t mid,
             std::size_t out, std::size_t kernel, std::mt19937_64& rng);
  Var operator()(const Var& x) const;

 private:
  ag::Parameter* w1_;
  ag::Parameter* b1_;
  ag::Parameter* w2_;
  ag::Parameter* b2_;
};

}  // namespace forecast::nets
