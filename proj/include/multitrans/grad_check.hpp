#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "multitrans/tensor.hpp"

namespace multitrans {

/// How analytic and numeric gradients are compared.
enum class ErrorNorm {
  /// |a - n| / max(|a|, |n|, 1e-8) for every coordinate.
  coordinate,
  /// ||a - n|| / max(||a||, ||n||, 1e-6) for every input tensor (2-norms).
  tensor,
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  ErrorNorm norm = ErrorNorm::coordinate;
  /// When nonempty, the backward rule of this op sees its upstream gradient
  /// scaled by `fault_factor` (negative control).
  std::string fault_op;
  double fault_factor = 1.5;
};

struct CoordinateCheck {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = true;
};

struct TensorCheck {
  std::size_t input = 0;
  double rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  ErrorNorm norm = ErrorNorm::coordinate;
  /// Under `norm`.
  double max_rel_error = 0.0;
  /// Worst coordinate-wise error, reported whatever `norm` is.
  double max_coordinate_error = 0.0;
  /// Units checked under `norm`: coordinates or tensors.
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::vector<CoordinateCheck> coordinates;
  std::vector<TensorCheck> tensors;

  bool passed() const { return checked > 0 && failed == 0; }
};

/// |a - b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor = 1e-8);

/// Compares reverse-mode gradients of the scalar `f` with respect to each
/// tensor in `inputs` against central differences (f(x+h) - f(x-h)) / 2h.
/// `f` must read the inputs through the given handles and be deterministic.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& options = {});

}  // namespace multitrans
