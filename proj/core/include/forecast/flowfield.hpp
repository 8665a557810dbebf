#pragma once

// Per-cell flow vectors between consecutive frames, and a harness measuring
// how a cellwise input transform reorients them.

#include <array>
#include <functional>

#include "forecast/tensor.hpp"

namespace forecast::flowfield {

/// Neighbour views of the previous frame over interior cells, each [M-2, N-2].
/// For interior cell (k+1, l+1): A is the cell above, B below, C left, D right.
struct ShiftedViews {
  Tensor up, down, left, right;
};

/// Y is [M, N]; throws DomainError when M or N < 3.
ShiftedViews shifted_views(const Tensor& y);

/// [M-2, N-2, 2] with channel 0 vertical (A+B) and channel 1 horizontal (C+D).
using FlowMatrix = Tensor;

FlowMatrix flow_matrix(const Tensor& current, const Tensor& previous);

/// Flow for every transition in [T, M, N]: [T-1, M-2, N-2, 2].
Tensor flow_sequence(const Tensor& frames);

using CellTransform = std::function<double(double value, std::size_t row, std::size_t col)>;

struct PerturbationStats {
  double mean_angle_degrees = 0.0;
  /// Mean of |f'| / |f| over vectors with nonzero original magnitude; 1 if there are none.
  double mean_magnitude_ratio = 1.0;
  std::size_t vectors = 0;
};

/// Angle between two 2-vectors in degrees; 0 for two zero vectors, 90 when exactly one is zero.
double vector_angle_degrees(std::array<double, 2> a, std::array<double, 2> b);

/// frames [T, M, N] with T >= 2.
PerturbationStats perturbation_diagnostic(const Tensor& frames, const CellTransform& transform);

}  // namespace forecast::flowfield
