#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "readlab/tensor/tensor.hpp"

namespace readlab::tensor {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct CoordinateCheck {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
  /// Worst coordinate per parameter, in input order.
  std::vector<CoordinateCheck> worst;
  /// Coordinates whose perturbed evaluation was not finite.
  std::vector<CoordinateCheck> non_finite;
};

/// Builds a fresh graph and returns a scalar loss.
using LossFn = std::function<Tensor(Graph&)>;

/// Compares backward() against central differences for every parameter
/// that requires grad. Parameter gradients are zeroed before and after.
GradCheckReport grad_check(const LossFn& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

/// Single-input form: f receives the point as a leaf tensor.
GradCheckReport grad_check(const std::function<Tensor(Tensor)>& f, const Shape& shape,
                           std::span<const double> point, const GradCheckOptions& options = {});

}  // namespace readlab::tensor
