#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "transnorm/gradcheck.hpp"
#include "transnorm/ops.hpp"

namespace testutil {

/// Reverse-mode vs central-difference comparison for an op under a random
/// weighted-sum loss (a plain sum would give degenerate cotangents for
/// normalizing ops). Returns the worst relative error over all coordinates
/// of all listed inputs.
inline double check_grads(const std::function<tn::Tensor()>& fwd,
                          std::vector<tn::Tensor> inputs, tn::Rng& rng,
                          double step = 1e-5) {
  tn::Tensor probe = fwd();
  tn::Tensor wgt = tn::Tensor::uniform(probe.shape(), rng, -1.0, 1.0);
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    tn::GradTape tape;
    tn::Tensor loss = tn::sum(tn::mul(fwd(), wgt));
    tape.backward(loss);
  }
  auto eval = [&]() { return tn::sum(tn::mul(fwd(), wgt)).item(); };
  double worst = 0.0;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double fd = tn::fd_gradient_coord(eval, t, i, step);
      worst = std::max(worst, tn::rel_err(t.grad()[i], fd));
    }
  }
  return worst;
}

/// Two-scale central difference. Near a kink (relu/argmax crossing within the
/// step) the two estimates disagree and no reliable oracle value exists, so
/// the probe reports unusable; a wrong backward rule still fails because the
/// estimates agree with each other and not with the analytic gradient.
inline std::optional<double> fd_probe(const std::function<double()>& eval, tn::Tensor& x,
                                      std::size_t coord, double step = 1e-5) {
  double a = tn::fd_gradient_coord(eval, x, coord, step);
  double b = tn::fd_gradient_coord(eval, x, coord, step / 4.0);
  if (tn::rel_err(a, b) > 1e-4) return std::nullopt;
  return b;
}

inline bool bitwise_equal(const tn::Tensor& a, const tn::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

inline double max_abs_diff(const tn::Tensor& a, const tn::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace testutil
