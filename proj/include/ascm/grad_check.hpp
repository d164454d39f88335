#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>

#include "ascm/autograd.hpp"

namespace ascm {

using ScalarFn = std::function<Var(Tape<double>&, Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-4);

struct ParameterGradError {
  double max_rel_error = 0;
  std::string worst_parameter;
  std::size_t checked = 0;
  /// Error at the requested step before any refinement.
  double max_rel_error_at_h = 0;
  /// Coordinates that exceeded `tolerance` at h and were measured again at h / 100.
  std::size_t refined = 0;
};

/// Same measure over every element of every parameter of a scalar loss built by
/// `loss`. A coordinate whose error at h exceeds `tolerance` is measured again
/// at h / 100, since a step that straddles a relu kink is not a gradient error;
/// max_rel_error keeps the refined value. Parameter values are restored before
/// returning.
ParameterGradError grad_check_parameters(const std::function<Var(Tape<double>&)>& loss,
                                         std::span<Parameter<double>* const> params, double h = 1e-4,
                                         double tolerance = std::numeric_limits<double>::infinity());

}  // namespace ascm
