#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "transnorm/errors.hpp"
#include "transnorm/rng.hpp"

namespace tn {

/// Dimension sizes, outermost first. All entries positive.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
using TensorPtr = std::shared_ptr<TensorImpl>;
}  // namespace detail

/// Dense row-major tensor of doubles. The handle is cheap to copy; the
/// underlying buffer is shared and treated as immutable once the tensor has
/// entered a forward computation (only the grad buffer mutates afterwards).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Size along axis i; negative i counts from the back.
  int dim(int i) const;
  std::size_t numel() const { return impl_->data.size(); }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& data() { return impl_->data; }

  /// Value of a rank-0/size-1 tensor.
  double item() const;
  /// Element access by multi-index (tests and small utilities).
  double at(std::initializer_list<int> idx) const;

  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return impl_->requires_grad; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zero-initialized on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy with no grad buffer and no tape linkage.
  Tensor clone() const;

  bool all_finite() const;

  detail::TensorPtr ptr() const { return impl_; }

 private:
  explicit Tensor(detail::TensorPtr p) : impl_(std::move(p)) {}
  detail::TensorPtr impl_;

  friend Tensor wrap(detail::TensorPtr);
};

inline Tensor wrap(detail::TensorPtr p) { return Tensor(std::move(p)); }

/// Records backward rules in forward execution order. Constructing a tape
/// activates it for the current thread (RAII); ops record onto the innermost
/// active tape. One tape per logical execution context.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Seeds d(loss)/d(loss)=1 and replays recorded rules in reverse order.
  /// Gradients accumulate additively into every requires_grad tensor
  /// reachable from the loss.
  void backward(const Tensor& loss);

  void record(std::function<void()> backward_step);
  std::size_t node_count() const { return nodes_.size(); }

  static GradTape* active();

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace tn
