#include "forecast/flowfield.hpp"

#include <cmath>
#include <numbers>

#include "forecast/errors.hpp"

namespace forecast::flowfield {

namespace {

void require_grid(const Tensor& y) {
  if (y.rank() != 2) throw DomainError("flow field expects a 2-D frame, got " + shape_string(y.shape()));
  if (y.dim(0) < 3 || y.dim(1) < 3) {
    throw DomainError("flow field needs at least a 3x3 grid, got " + shape_string(y.shape()));
  }
}

Tensor view(const Tensor& y, std::size_t row0, std::size_t col0) {
  const std::size_t rows = y.dim(0) - 2, cols = y.dim(1) - 2, n = y.dim(1);
  Tensor out({rows, cols});
  for (std::size_t k = 0; k < rows; ++k)
    for (std::size_t l = 0; l < cols; ++l) out[k * cols + l] = y[(k + row0) * n + l + col0];
  return out;
}

}  // namespace

ShiftedViews shifted_views(const Tensor& y) {
  require_grid(y);
  return {view(y, 0, 1), view(y, 2, 1), view(y, 1, 0), view(y, 1, 2)};
}

FlowMatrix flow_matrix(const Tensor& current, const Tensor& previous) {
  require_grid(current);
  if (current.shape() != previous.shape()) {
    throw DomainError("flow frames differ in shape: " + shape_string(current.shape()) + " vs " +
                      shape_string(previous.shape()));
  }
  const std::size_t rows = current.dim(0) - 2, cols = current.dim(1) - 2, n = current.dim(1);
  const auto prev = shifted_views(previous);
  Tensor f({rows, cols, 2});
  for (std::size_t k = 0; k < rows; ++k)
    for (std::size_t l = 0; l < cols; ++l) {
      const double y = current[(k + 1) * n + l + 1];
      const std::size_t c = k * cols + l;
      f[2 * c] = (y - prev.up[c]) + (y - prev.down[c]);
      f[2 * c + 1] = (y - prev.left[c]) + (y - prev.right[c]);
    }
  return f;
}

Tensor flow_sequence(const Tensor& frames) {
  if (frames.rank() != 3 || frames.dim(0) < 2) {
    throw DomainError("flow sequence expects [T >= 2, M, N], got " + shape_string(frames.shape()));
  }
  const std::size_t steps = frames.dim(0), rows = frames.dim(1), cols = frames.dim(2), plane = rows * cols;
  const auto frame = [&](std::size_t t) {
    return Tensor({rows, cols}, std::vector<double>(frames.raw() + t * plane, frames.raw() + (t + 1) * plane));
  };
  Tensor out({steps - 1, rows - 2, cols - 2, 2});
  const std::size_t per = (rows - 2) * (cols - 2) * 2;
  Tensor prev = frame(0);
  for (std::size_t t = 1; t < steps; ++t) {
    Tensor cur = frame(t);
    const Tensor f = flow_matrix(cur, prev);
    std::copy(f.raw(), f.raw() + per, out.raw() + (t - 1) * per);
    prev = std::move(cur);
  }
  return out;
}

double vector_angle_degrees(std::array<double, 2> a, std::array<double, 2> b) {
  const bool a_zero = a[0] == 0.0 && a[1] == 0.0;
  const bool b_zero = b[0] == 0.0 && b[1] == 0.0;
  if (a_zero && b_zero) return 0.0;
  if (a_zero || b_zero) return 90.0;
  // atan2 stays exact for parallel vectors where acos of the cosine would not
  const double cross = a[0] * b[1] - a[1] * b[0];
  const double dot = a[0] * b[0] + a[1] * b[1];
  return std::atan2(std::abs(cross), dot) * 180.0 / std::numbers::pi;
}

PerturbationStats perturbation_diagnostic(const Tensor& frames, const CellTransform& transform) {
  const Tensor original = flow_sequence(frames);
  Tensor changed_frames = frames;
  const std::size_t rows = frames.dim(1), cols = frames.dim(2), plane = rows * cols;
  for (std::size_t t = 0; t < frames.dim(0); ++t)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        double& v = changed_frames[t * plane + i * cols + j];
        v = transform(v, i, j);
      }
  const Tensor changed = flow_sequence(changed_frames);

  PerturbationStats stats;
  stats.vectors = original.size() / 2;
  double angle_sum = 0.0, ratio_sum = 0.0;
  std::size_t ratio_count = 0;
  for (std::size_t v = 0; v < stats.vectors; ++v) {
    const std::array<double, 2> a{original[2 * v], original[2 * v + 1]};
    const std::array<double, 2> b{changed[2 * v], changed[2 * v + 1]};
    angle_sum += vector_angle_degrees(a, b);
    const double na = std::hypot(a[0], a[1]);
    if (na > 0.0) {
      ratio_sum += std::hypot(b[0], b[1]) / na;
      ++ratio_count;
    }
  }
  stats.mean_angle_degrees = angle_sum / static_cast<double>(stats.vectors);
  if (ratio_count) stats.mean_magnitude_ratio = ratio_sum / static_cast<double>(ratio_count);
  return stats;
}

}  // namespace forecast::flowfield
