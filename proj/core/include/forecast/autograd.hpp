#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A forward pass builds a DAG of Nodes; `backward(loss)` walks it in reverse
// topological order. Nodes whose inputs need no gradient carry no backward
// closure, so inference-only passes keep no graph alive.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "forecast/tensor.hpp"

namespace forecast::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// While alive on this thread, new nodes record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

/// Seeds d(root)/d(root) = 1 and propagates. `root` must hold a single element.
void backward(const Var& root);

// ---- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_n(const std::vector<Var>& terms);
Var scale(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

// ---- shape ----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
/// Concatenates along `axis`; all other extents must agree.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
/// Swaps axes 1 and 2 of a tensor with rank >= 3.
Var swap_axes12(const Var& a);
/// [B, ...] -> [B * reps, ...]; each sample repeated `reps` times consecutively.
Var tile_batch(const Var& a, std::size_t reps);

// ---- spatial ----------------------------------------------------------------
/// Stride-1 convolution with same padding (odd kernels).
/// x: [B, C, H, W], weight: [O, C, K, K], bias: [O] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias = {});
/// 2x2 stride-2 transposed convolution. x: [B, C, H, W], weight: [C, O, 2, 2], bias: [O].
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias = {});
/// 2x2 max pooling, stride 2 (H and W must be even).
Var max_pool2(const Var& x);
/// Reflect padding on the bottom and right edges of [B, C, H, W]; mirrors
/// repeatedly when the padding exceeds the extent.
Var reflect_pad(const Var& x, std::size_t bottom, std::size_t right);
/// Keeps the top-left [height, width] window of [B, C, H, W].
Var crop(const Var& x, std::size_t height, std::size_t width);

// ---- reductions ---------------------------------------------------------------
/// Softmax along axis 1 of [B, C, H, W] (per spatial position over channels).
Var softmax_channels(const Var& x);
/// Softmax over H*W of [B, C, H, W] (per sample and channel).
Var softmax_spatial(const Var& x);
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& prediction, const Var& target);
/// window: [B, L, H, W], weights: [L] -> [B, 1, H, W] = sum_l w_l x_l / sum_l w_l.
Var weighted_average(const Var& window, const Var& weights);

// ---- parameters -------------------------------------------------------------

/// A named trainable tensor; the leaf Var persists across forward passes.
class Parameter {
 public:
  Parameter(std::string name, Tensor init);

  const std::string& name() const { return name_; }
  const Var& var() const { return var_; }
  Tensor& value() { return var_.node()->value; }
  const Tensor& value() const { return var_.node()->value; }
  Tensor& grad() { return var_.node()->grad_buffer(); }
  void zero_grad();

 private:
  std::string name_;
  Var var_;
};

/// Ordered, name-addressable collection of parameters.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::deque<Parameter>& items() { return params_; }
  const std::deque<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  void zero_grad();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Parameter> params_;  // references stay valid across add()
};

}  // namespace forecast::ag
