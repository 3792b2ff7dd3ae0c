#include "transnorm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace tn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

static detail::TensorPtr make_impl(const Shape& shape) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data.assign(shape_numel(shape), 0.0);
  return impl;
}

Tensor Tensor::zeros(const Shape& shape) { return wrap(make_impl(shape)); }

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  auto impl = make_impl(shape);
  for (auto& v : impl->data) v = value;
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  if (values.size() != shape_numel(shape))
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return wrap(std::move(impl));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev) {
  auto impl = make_impl(shape);
  for (auto& v : impl->data) v = rng.normal(0.0, stddev);
  return wrap(std::move(impl));
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  auto impl = make_impl(shape);
  for (auto& v : impl->data) v = rng.uniform(lo, hi);
  return wrap(std::move(impl));
}

int Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r)
    throw DimensionError("axis " + std::to_string(i) + " out of range for shape " +
                         shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() requires a single-element tensor, got shape " +
                        shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (idx.size() != impl_->shape.size())
    throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    off = off * static_cast<std::size_t>(impl_->shape[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return impl_->data[off];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw ContractError("gradient not populated for tensor of shape " + shape_str(shape()));
  return impl_->grad;
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return wrap(std::move(impl));
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
thread_local std::vector<GradTape*> g_tape_stack;
}

GradTape::GradTape() { g_tape_stack.push_back(this); }

GradTape::~GradTape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

GradTape* GradTape::active() {
  return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

void GradTape::record(std::function<void()> backward_step) {
  nodes_.push_back(std::move(backward_step));
}

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  loss.ptr()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace tn
