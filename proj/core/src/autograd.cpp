#include "forecast/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "forecast/errors.hpp"

namespace forecast::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool grad_disabled = false;

bool any_requires_grad(const std::vector<Var>& inputs) {
  if (grad_disabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
}

Var make_node(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Var& v : inputs) node->inputs.push_back(v.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw GraphError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw GraphError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

// Unary elementwise op whose derivative is expressed through the output value.
template <typename Fwd, typename DerivFromOutput>
Var unary_from_output(const Var& a, Fwd fwd, DerivFromOutput deriv) {
  Tensor out(a.shape());
  const double* in = a.value().raw();
  double* o = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = fwd(in[i]);
  return make_node(std::move(out), {a}, [deriv](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    Tensor& g = src.grad_buffer();
    const double* y = self.value.raw();
    const double* gy = self.grad.raw();
    double* gx = g.raw();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += gy[i] * deriv(y[i]);
  });
}

// im2col for one sample: x [C, H, W] -> col [C*K*K, H*W], zero padding K/2.
void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
            double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        double* dst = col + row * height * width;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - pad;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - pad;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + di;
          double* drow = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, 0.0);
            continue;
          }
          const double* srow = plane + sy * w;
          for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = xx + dj;
            drow[xx] = (sx < 0 || sx >= w) ? 0.0 : srow[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col [C*K*K, H*W] into dx [C, H, W].
void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
                double* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = dx + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        const double* src = col + row * height * width;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - pad;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - pad;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + di;
          if (sy < 0 || sy >= h) continue;
          const double* srow = src + y * w;
          double* drow = plane + sy * w;
          for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = xx + dj;
            if (sx >= 0 && sx < w) drow[sx] += srow[xx];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- Node / graph -------------------------------------------------------------

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.empty() != value.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) { grad_buffer() += g; }

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined()) throw GraphError("backward on undefined variable");
  if (root.value().size() != 1) throw GraphError("backward requires a scalar root, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Free interior gradients; leaves keep theirs.
  for (Node* node : order) {
    if (node->backward_fn) node->grad = Tensor();
  }
}

// ---- elementwise --------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().raw();
  double* po = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const double* pa = a.value().raw();
  const double* pb = b.value().raw();
  double* po = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double* gy = self.grad.raw();
    if (na.requires_grad) {
      double* g = na.grad_buffer().raw();
      const double* vb = nb.value.raw();
      for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += gy[i] * vb[i];
    }
    if (nb.requires_grad) {
      double* g = nb.grad_buffer().raw();
      const double* va = na.value.raw();
      for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += gy[i] * va[i];
    }
  });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw GraphError("add_n: no terms");
  Tensor out = terms.front().value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(terms.front(), terms[i], "add_n");
    out += terms[i].value();
  }
  return make_node(std::move(out), terms, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var sigmoid(const Var& a) {
  return unary_from_output(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary_from_output(
      a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary_from_output(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

// ---- shape ----------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    Tensor& g = src.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw GraphError("concat: no parts");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw GraphError("concat: axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw GraphError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw GraphError("concat: extent mismatch " + shape_string(s) + " vs " + shape_string(ref));
      }
    }
    lengths.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().raw();
    const std::size_t chunk = lengths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.raw() + o * total * inner + offset * inner);
    }
    offset += lengths[p];
  }
  return make_node(std::move(out), parts, [lengths, outer, inner, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      Node& src = *self.inputs[p];
      const std::size_t chunk = lengths[p] * inner;
      if (src.requires_grad) {
        double* g = src.grad_buffer().raw();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* gy = self.grad.raw() + o * total * inner + offset * inner;
          for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += gy[i];
        }
      }
      offset += lengths[p];
    }
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0) {
    throw GraphError("slice out of range on " + shape_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t src_stride = s[axis] * inner;
  const std::size_t chunk = length * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = a.value().raw() + o * src_stride + start * inner;
    std::copy(src, src + chunk, out.raw() + o * chunk);
  }
  return make_node(std::move(out), {a}, [outer, inner, start, src_stride, chunk](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = g + o * src_stride + start * inner;
      const double* gy = self.grad.raw() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += gy[i];
    }
  });
}

namespace {

// [A, B, C, R] -> [A, C, B, R] for contiguous trailing block R.
void swap12(const double* src, double* dst, std::size_t a, std::size_t b, std::size_t c, std::size_t r) {
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        const double* s = src + ((i * b + j) * c + k) * r;
        std::copy(s, s + r, dst + ((i * c + k) * b + j) * r);
      }
}

}  // namespace

Var swap_axes12(const Var& a) {
  if (a.value().rank() < 3) throw GraphError("swap_axes12 needs rank >= 3, got " + shape_string(a.shape()));
  Shape shape = a.shape();
  const std::size_t d0 = shape[0], d1 = shape[1], d2 = shape[2];
  const std::size_t rest = a.value().size() / (d0 * d1 * d2);
  std::swap(shape[1], shape[2]);
  Tensor out(shape);
  swap12(a.value().raw(), out.raw(), d0, d1, d2, rest);
  return make_node(std::move(out), {a}, [d0, d1, d2, rest](Node& self) {
    Node& in = *self.inputs[0];
    Tensor g(in.value.shape());
    swap12(self.grad.raw(), g.raw(), d0, d2, d1, rest);
    in.accumulate(g);
  });
}

Var tile_batch(const Var& a, std::size_t reps) {
  const Shape& s = a.shape();
  if (s.empty() || reps == 0) throw GraphError("tile_batch: bad arguments");
  const std::size_t batch = s[0];
  const std::size_t per = a.value().size() / batch;
  Shape out_shape = s;
  out_shape[0] = batch * reps;
  Tensor out(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = a.value().raw() + b * per;
    for (std::size_t r = 0; r < reps; ++r) std::copy(src, src + per, out.raw() + (b * reps + r) * per);
  }
  return make_node(std::move(out), {a}, [batch, per, reps](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < reps; ++r) {
        const double* gy = self.grad.raw() + (b * reps + r) * per;
        for (std::size_t i = 0; i < per; ++i) g[b * per + i] += gy[i];
      }
  });
}

// ---- spatial ----------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t out_channels = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != k || k % 2 == 0) {
    throw GraphError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.value().rank() != 1 || bias.dim(0) != out_channels)) {
    throw GraphError("conv2d: bias shape " + shape_string(bias.shape()));
  }
  const std::size_t hw = height * width;
  const std::size_t ckk = channels * k * k;

  Tensor out({batch, out_channels, height, width});
  ConstMapMat w(weight.value().raw(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(ckk));
  AlignedBuffer col(k == 1 ? 0 : ckk * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.value().raw() + b * channels * hw;
    const double* cp = xb;
    if (k != 1) {
      im2col(xb, channels, height, width, k, col.data());
      cp = col.data();
    }
    ConstMapMat c(cp, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw));
    MapMat o(out.raw() + b * out_channels * hw, static_cast<Eigen::Index>(out_channels),
             static_cast<Eigen::Index>(hw));
    o.noalias() = w * c;
    if (has_bias) {
      for (std::size_t oc = 0; oc < out_channels; ++oc) o.row(static_cast<Eigen::Index>(oc)).array() += bias.value()[oc];
    }
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_node(std::move(out), inputs,
                   [batch, channels, height, width, out_channels, k, hw, ckk, has_bias](Node& self) {
                     Node& nx = *self.inputs[0];
                     Node& nw = *self.inputs[1];
                     ConstMapMat w(nw.value.raw(), static_cast<Eigen::Index>(out_channels),
                                   static_cast<Eigen::Index>(ckk));
                     AlignedBuffer col(ckk * hw);
                     AlignedBuffer dcol(k == 1 ? 0 : ckk * hw);
                     double* gw = nw.requires_grad ? nw.grad_buffer().raw() : nullptr;
                     double* gx = nx.requires_grad ? nx.grad_buffer().raw() : nullptr;
                     double* gb = (has_bias && self.inputs[2]->requires_grad) ? self.inputs[2]->grad_buffer().raw()
                                                                              : nullptr;
                     for (std::size_t b = 0; b < batch; ++b) {
                       ConstMapMat gy(self.grad.raw() + b * out_channels * hw,
                                      static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(hw));
                       if (gb) {
                         for (std::size_t oc = 0; oc < out_channels; ++oc)
                           gb[oc] += gy.row(static_cast<Eigen::Index>(oc)).sum();
                       }
                       if (gw) {
                         const double* xb = nx.value.raw() + b * channels * hw;
                         const double* cp = xb;
                         if (k != 1) {
                           im2col(xb, channels, height, width, k, col.data());
                           cp = col.data();
                         }
                         ConstMapMat c(cp, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw));
                         MapMat g(gw, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(ckk));
                         g.noalias() += gy * c.transpose();
                       }
                       if (gx) {
                         double* gxb = gx + b * channels * hw;
                         if (k == 1) {
                           MapMat d(gxb, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw));
                           d.noalias() += w.transpose() * gy;
                         } else {
                           MapMat d(dcol.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw));
                           d.noalias() = w.transpose() * gy;
                           col2im_add(dcol.data(), channels, height, width, k, gxb);
                         }
                       }
                     }
                   });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv_transpose2x2 input");
  require_rank(weight, 4, "conv_transpose2x2 weight");
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t out_channels = weight.dim(1);
  if (weight.dim(0) != channels || weight.dim(2) != 2 || weight.dim(3) != 2) {
    throw GraphError("conv_transpose2x2: weight " + shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  const std::size_t hw = height * width;
  const std::size_t oh = 2 * height, ow = 2 * width;
  Tensor out({batch, out_channels, oh, ow});
  const double* w = weight.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.value().raw() + b * channels * hw;
    double* ob = out.raw() + b * out_channels * oh * ow;
    for (std::size_t o = 0; o < out_channels; ++o) {
      double* plane = ob + o * oh * ow;
      if (has_bias) std::fill(plane, plane + oh * ow, bias.value()[o]);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* wc = w + (c * out_channels + o) * 4;
        const double* xc = xb + c * hw;
        for (std::size_t i = 0; i < height; ++i)
          for (std::size_t j = 0; j < width; ++j) {
            const double v = xc[i * width + j];
            double* p = plane + 2 * i * ow + 2 * j;
            p[0] += v * wc[0];
            p[1] += v * wc[1];
            p[ow] += v * wc[2];
            p[ow + 1] += v * wc[3];
          }
      }
    }
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_node(std::move(out), inputs,
                   [batch, channels, height, width, out_channels, hw, oh, ow, has_bias](Node& self) {
                     Node& nx = *self.inputs[0];
                     Node& nw = *self.inputs[1];
                     double* gx = nx.requires_grad ? nx.grad_buffer().raw() : nullptr;
                     double* gw = nw.requires_grad ? nw.grad_buffer().raw() : nullptr;
                     double* gb = (has_bias && self.inputs[2]->requires_grad) ? self.inputs[2]->grad_buffer().raw()
                                                                              : nullptr;
                     const double* w = nw.value.raw();
                     for (std::size_t b = 0; b < batch; ++b) {
                       const double* xb = nx.value.raw() + b * channels * hw;
                       const double* gyb = self.grad.raw() + b * out_channels * oh * ow;
                       for (std::size_t o = 0; o < out_channels; ++o) {
                         const double* gplane = gyb + o * oh * ow;
                         if (gb) {
                           for (std::size_t i = 0; i < oh * ow; ++i) gb[o] += gplane[i];
                         }
                         for (std::size_t c = 0; c < channels; ++c) {
                           const std::size_t widx = (c * out_channels + o) * 4;
                           const double* xc = xb + c * hw;
                           for (std::size_t i = 0; i < height; ++i)
                             for (std::size_t j = 0; j < width; ++j) {
                               const double* p = gplane + 2 * i * ow + 2 * j;
                               if (gx) {
                                 gx[b * channels * hw + c * hw + i * width + j] +=
                                     p[0] * w[widx] + p[1] * w[widx + 1] + p[ow] * w[widx + 2] +
                                     p[ow + 1] * w[widx + 3];
                               }
                               if (gw) {
                                 const double v = xc[i * width + j];
                                 gw[widx] += v * p[0];
                                 gw[widx + 1] += v * p[1];
                                 gw[widx + 2] += v * p[ow];
                                 gw[widx + 3] += v * p[ow + 1];
                               }
                             }
                         }
                       }
                     }
                   });
}

Var max_pool2(const Var& x) {
  require_rank(x, 4, "max_pool2");
  const std::size_t planes = x.dim(0) * x.dim(1), height = x.dim(2), width = x.dim(3);
  if (height % 2 || width % 2) throw GraphError("max_pool2: odd spatial extent " + shape_string(x.shape()));
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().raw() + p * height * width;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * width + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * width + 2 * j + dj;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = p * oh * ow + i * ow + j;
        out[o] = src[best];
        argmax[o] = p * height * width + best;
      }
  }
  return make_node(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

Var reflect_pad(const Var& x, std::size_t bottom, std::size_t right) {
  require_rank(x, 4, "reflect_pad");
  const std::size_t planes = x.dim(0) * x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t oh = height + bottom, ow = width + right;
  // repeated mirroring, so padding may exceed the extent
  auto reflect = [](std::size_t i, std::size_t n) {
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1), r = i % period;
    return r < n ? r : period - r;
  };
  std::vector<std::size_t> source(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) source[i * ow + j] = reflect(i, height) * width + reflect(j, width);
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh * ow; ++i) out[p * oh * ow + i] = x.value()[p * height * width + source[i]];
  return make_node(std::move(out), {x}, [source = std::move(source), planes, height, width, oh, ow](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < oh * ow; ++i) g[p * height * width + source[i]] += self.grad[p * oh * ow + i];
  });
}

Var crop(const Var& x, std::size_t height, std::size_t width) {
  require_rank(x, 4, "crop");
  const std::size_t planes = x.dim(0) * x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (height > ih || width > iw) throw GraphError("crop: window larger than input");
  Tensor out({x.dim(0), x.dim(1), height, width});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j)
        out[(p * height + i) * width + j] = x.value()[(p * ih + i) * iw + j];
  return make_node(std::move(out), {x}, [planes, ih, iw, height, width](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) g[(p * ih + i) * iw + j] += self.grad[(p * height + i) * width + j];
  });
}

// ---- reductions --------------------------------------------------------------------

namespace {

// Softmax over an axis of length `len` with element stride `inner`, repeated for
// every (outer, inner) position.
Var strided_softmax(const Var& x, std::size_t outer, std::size_t len, std::size_t inner) {
  Tensor out(x.shape());
  const double* in = x.value().raw();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * len * inner + r;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) peak = std::max(peak, in[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(in[base + l * inner] - peak);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  return make_node(std::move(out), {x}, [outer, len, inner](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    double* g = src.grad_buffer().raw();
    const double* y = self.value.raw();
    const double* gy = self.grad.raw();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * len * inner + r;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += gy[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          g[i] += y[i] * (gy[i] - dot);
        }
      }
  });
}

}  // namespace

Var softmax_channels(const Var& x) {
  require_rank(x, 4, "softmax_channels");
  return strided_softmax(x, x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
}

Var softmax_spatial(const Var& x) {
  require_rank(x, 4, "softmax_spatial");
  return strided_softmax(x, x.dim(0) * x.dim(1), x.dim(2) * x.dim(3), 1);
}

Var sum(const Var& a) {
  Tensor out(Shape{}, a.value().sum());
  return make_node(std::move(out), {a}, [](Node& self) {
    Node& src = *self.inputs[0];
    if (!src.requires_grad) return;
    Tensor& g = src.grad_buffer();
    const double gy = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(const Var& prediction, const Var& target) {
  require_same_shape(prediction, target, "mse");
  const std::size_t n = prediction.value().size();
  if (n == 0) throw GraphError("mse: empty tensors");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = prediction.value()[i] - target.value()[i];
    total += d * d;
  }
  Tensor out(Shape{}, total / static_cast<double>(n));
  return make_node(std::move(out), {prediction, target}, [n](Node& self) {
    Node& p = *self.inputs[0];
    Node& t = *self.inputs[1];
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    if (p.requires_grad) {
      double* g = p.grad_buffer().raw();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (p.value[i] - t.value[i]);
    }
    if (t.requires_grad) {
      double* g = t.grad_buffer().raw();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (p.value[i] - t.value[i]);
    }
  });
}

Var weighted_average(const Var& window, const Var& weights) {
  require_rank(window, 4, "weighted_average window");
  const std::size_t batch = window.dim(0), len = window.dim(1), hw = window.dim(2) * window.dim(3);
  if (weights.value().rank() != 1 || weights.dim(0) != len) {
    throw GraphError("weighted_average: weights " + shape_string(weights.shape()) + " vs window " +
                     shape_string(window.shape()));
  }
  const double total = weights.value().sum();
  if (total == 0.0 || !std::isfinite(total)) throw GraphError("weighted_average: weights sum to zero");
  Tensor out({batch, 1, window.dim(2), window.dim(3)});
  const double* w = weights.value().raw();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = window.value().raw() + (b * len + l) * hw;
      double* dst = out.raw() + b * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += w[l] * src[i];
    }
  out *= 1.0 / total;
  return make_node(std::move(out), {window, weights}, [batch, len, hw, total](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    const double* w = nw.value.raw();
    const double* gy = self.grad.raw();
    if (nx.requires_grad) {
      double* g = nx.grad_buffer().raw();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < hw; ++i) g[(b * len + l) * hw + i] += gy[b * hw + i] * w[l] / total;
    }
    if (nw.requires_grad) {
      // d/dw_l [sum_j w_j x_j / S] = (x_l - y) / S
      double* g = nw.grad_buffer().raw();
      const double* y = self.value.raw();
      for (std::size_t l = 0; l < len; ++l) {
        double acc = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < hw; ++i)
            acc += gy[b * hw + i] * (nx.value[(b * len + l) * hw + i] - y[b * hw + i]);
        g[l] += acc / total;
      }
    }
  });
}

// ---- parameters -------------------------------------------------------------

Parameter::Parameter(std::string name, Tensor init) : name_(std::move(name)), var_(leaf(std::move(init), true)) {}

void Parameter::zero_grad() { var_.node()->grad_buffer().fill(0.0); }

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw GraphError("duplicate parameter name: " + name);
  params_.emplace_back(std::move(name), std::move(init));
  return params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name() == name) return p;
  throw GraphError("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return p;
  throw GraphError("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name() == name; });
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value());
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw GraphError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value().shape()) {
      throw GraphError("restore: shape mismatch for " + params_[i].name());
    }
    params_[i].value() = values[i];
  }
}

}  // namespace forecast::ag
