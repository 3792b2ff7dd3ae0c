#pragma once

#include <functional>

#include "transnorm/tensor.hpp"

namespace tn {

/// Central-difference gradient of a scalar function at x:
/// (f(x+h*e_i) - f(x-h*e_i)) / (2h) per coordinate. Evaluations run outside
/// any tape, so this path is independent of the reverse-mode machinery.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double step);

/// Single-coordinate central difference for large tensors: temporarily
/// perturbs x in place (restored before returning) and re-runs `eval`.
double fd_gradient_coord(const std::function<double()>& eval, Tensor& x,
                         std::size_t coord, double step);

/// |a-b| / max(|a|, |b|, floor) — the comparison used by all gradient checks.
/// The floor turns the test absolute for gradients smaller than `floor`,
/// where central differences bottom out in roundoff noise.
double rel_err(double a, double b, double floor = 1.0e-4);

}  // namespace tn
