#include "transnorm/nn.hpp"

namespace tn {

Rng layer_rng(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return Rng(seed ^ h);
}

namespace {
constexpr double kInitStd = 0.02;
}

Linear::Linear(int in, int out, std::uint64_t seed, const std::string& name) {
  Rng rng = layer_rng(seed, name);
  w = Tensor::randn({in, out}, rng, kInitStd).set_requires_grad(true);
  b = Tensor::zeros({out}).set_requires_grad(true);
}

Tensor Linear::operator()(const Tensor& x) const {
  int in = w.shape()[0], out = w.shape()[1];
  if (x.dim(-1) != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor flat = reshape(x, {static_cast<int>(x.numel()) / in, in});
  Tensor y = add(matmul(flat, w), b);
  return reshape(y, out_shape);
}

void Linear::visit(const std::string& prefix, StateVisitor& v) {
  v.tensor(prefix + ".weight", w, true);
  v.tensor(prefix + ".bias", b, true);
}

Conv2d::Conv2d(int in, int out, int k, int stride_, int padding_, std::uint64_t seed,
               const std::string& name)
    : stride(stride_), padding(padding_) {
  Rng rng = layer_rng(seed, name);
  w = Tensor::randn({out, in, k, k}, rng, kInitStd).set_requires_grad(true);
  b = Tensor::zeros({out}).set_requires_grad(true);
}

void Conv2d::visit(const std::string& prefix, StateVisitor& v) {
  v.tensor(prefix + ".weight", w, true);
  v.tensor(prefix + ".bias", b, true);
}

ConvTranspose2d::ConvTranspose2d(int in, int out, int k, int stride_, std::uint64_t seed,
                                 const std::string& name)
    : stride(stride_) {
  Rng rng = layer_rng(seed, name);
  w = Tensor::randn({in, out, k, k}, rng, kInitStd).set_requires_grad(true);
}

void ConvTranspose2d::visit(const std::string& prefix, StateVisitor& v) {
  v.tensor(prefix + ".weight", w, true);
}

BatchNorm2d::BatchNorm2d(int channels) {
  gamma = Tensor::ones({channels}).set_requires_grad(true);
  beta = Tensor::zeros({channels}).set_requires_grad(true);
  state.running_mean.assign(channels, 0.0);
  state.running_var.assign(channels, 1.0);
}

void BatchNorm2d::visit(const std::string& prefix, StateVisitor& v) {
  v.tensor(prefix + ".gamma", gamma, true);
  v.tensor(prefix + ".beta", beta, true);
  v.raw(prefix + ".running_mean", state.running_mean);
  v.raw(prefix + ".running_var", state.running_var);
  // batches counter travels as a 1-element buffer so checkpoints stay
  // a flat table of named f64 tensors
  counter_buf_.assign(1, static_cast<double>(state.batches_seen));
  v.raw(prefix + ".batches_seen", counter_buf_);
  state.batches_seen = static_cast<long long>(counter_buf_[0]);
}

LayerNorm::LayerNorm(int dim) {
  gain = Tensor::ones({dim}).set_requires_grad(true);
  shift = Tensor::zeros({dim}).set_requires_grad(true);
}

void LayerNorm::visit(const std::string& prefix, StateVisitor& v) {
  v.tensor(prefix + ".gain", gain, true);
  v.tensor(prefix + ".shift", shift, true);
}

ConvBnRelu::ConvBnRelu(int in, int out, std::uint64_t seed, const std::string& name)
    : conv(in, out, 3, 1, 1, seed, name + ".conv"), bn(out) {}

void ConvBnRelu::visit(const std::string& prefix, StateVisitor& v) {
  conv.visit(prefix + ".conv", v);
  bn.visit(prefix + ".bn", v);
}

}  // namespace tn
