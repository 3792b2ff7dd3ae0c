#include "transnorm/gradcheck.hpp"

#include <cmath>

namespace tn {

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double step) {
  if (step <= 0.0) throw ContractError("fd_gradient: step must be positive");
  Tensor probe = x.clone();
  Tensor g = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    double fp = f(probe);
    probe.data()[i] = orig - step;
    double fm = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double fd_gradient_coord(const std::function<double()>& eval, Tensor& x,
                         std::size_t coord, double step) {
  if (step <= 0.0) throw ContractError("fd_gradient_coord: step must be positive");
  double orig = x.data()[coord];
  x.data()[coord] = orig + step;
  double fp = eval();
  x.data()[coord] = orig - step;
  double fm = eval();
  x.data()[coord] = orig;
  return (fp - fm) / (2.0 * step);
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace tn
