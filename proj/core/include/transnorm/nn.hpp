#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transnorm/ops.hpp"
#include "transnorm/tensor.hpp"

namespace tn {

/// Walks every named piece of model state. `tensor` receives trainable
/// parameters; `raw` receives non-trainable buffers (running statistics,
/// counters) serialized as flat f64 vectors.
class StateVisitor {
 public:
  virtual ~StateVisitor() = default;
  virtual void tensor(const std::string& name, Tensor& t, bool trainable) = 0;
  virtual void raw(const std::string& name, std::vector<double>& values) = 0;
};

/// Per-layer generator derived from (seed, layer name). Layers that share a
/// name across model variants initialize identically, which keeps ablation
/// comparisons paired.
Rng layer_rng(std::uint64_t seed, const std::string& name);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(int in, int out, std::uint64_t seed, const std::string& name);
  Tensor operator()(const Tensor& x) const;  // [..., in] -> [..., out]
  void visit(const std::string& prefix, StateVisitor& v);
  int in_features() const { return w.shape()[0]; }
  int out_features() const { return w.shape()[1]; }
};

struct Conv2d {
  Tensor w;  // [out, in, k, k]
  Tensor b;  // [out]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride, int padding, std::uint64_t seed,
         const std::string& name);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, padding); }
  void visit(const std::string& prefix, StateVisitor& v);
};

struct ConvTranspose2d {
  Tensor w;  // [in, out, k, k]
  int stride = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int k, int stride, std::uint64_t seed,
                  const std::string& name);
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, w, stride); }
  void visit(const std::string& prefix, StateVisitor& v);
};

struct BatchNorm2d {
  Tensor gamma, beta;
  BatchNormState state;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Tensor operator()(const Tensor& x, bool training) {
    return batch_norm(x, gamma, beta, state, training, momentum, eps);
  }
  void visit(const std::string& prefix, StateVisitor& v);

 private:
  std::vector<double> counter_buf_;  // staging for the batches_seen counter
};

struct LayerNorm {
  Tensor gain, shift;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift, eps); }
  void visit(const std::string& prefix, StateVisitor& v);
};

/// conv3x3 (pad 1) -> batch norm -> relu
struct ConvBnRelu {
  Conv2d conv;
  BatchNorm2d bn;

  ConvBnRelu() = default;
  ConvBnRelu(int in, int out, std::uint64_t seed, const std::string& name);
  Tensor operator()(const Tensor& x, bool training) {
    return relu(bn(conv(x), training));
  }
  void visit(const std::string& prefix, StateVisitor& v);
};

}  // namespace tn
