#pragma once

#include <vector>

#include "transnorm/tensor.hpp"

namespace tn {

// Elementwise and binary ops. Binary ops broadcast trailing-aligned
// singleton axes (the patterns the network uses: bias rows, per-channel
// gates, per-batch scalars).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Shape ops.
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);

// Reductions.
Tensor sum(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
/// Max along one axis; gradient routes to the first (row-major) maximum.
Tensor max_axis(const Tensor& x, int axis, bool keepdim = false);

// Matrix products.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] · [k x n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [g x m x k] · [g x k x n]

// Convolution family (cross-correlation convention, square kernels).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
/// Adjoint of conv2d w.r.t. its input: weight layout [Cin x Cout x k x k],
/// output spatial size (H-1)*stride + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, int stride);
/// Non-overlapping max pooling; ties break to the first element in row-major
/// window order.
Tensor max_pool2d(const Tensor& input, int window);
Tensor global_avg_pool(const Tensor& input);  // [B,C,H,W] -> [B,C]

// Normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  long long batches_seen = 0;
};
/// Per-channel batch normalization over (B,H,W). Training mode normalizes by
/// batch statistics and updates the running buffers; inference mode uses the
/// running buffers and requires at least one prior training-mode call.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum = 0.1,
                  double eps = 1e-5);

/// Row-wise softmax over the last axis, stabilized by row-max subtraction.
Tensor softmax(const Tensor& x);

/// Integer-factor bilinear interpolation (align-corners-false convention).
Tensor bilinear_upsample(const Tensor& x, int factor);

/// out[m] = x[m, index[m]] for x of shape [M x K].
Tensor gather_index(const Tensor& x, const std::vector<int>& index);

/// Constant [M x K] matrix with row m one at column ids[m].
Tensor one_hot(const std::vector<int>& ids, int num_classes);

namespace detail {

// C[m x n] = (or +=) A[m x k] · B[k x n], row-major.
void gemm(int m, int k, int n, const double* a, const double* b, double* c,
          bool accumulate);
// C[m x n] (+)= A[m x k] · B[n x k]^T
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate);
// C[m x n] (+)= A[k x m]^T · B[k x n]
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate);

/// Accumulates into `out` the gradient of conv2d w.r.t. its input, given the
/// output cotangent `g`. conv_transpose2d forwards through this exact routine,
/// which makes the adjoint identity hold bit-for-bit.
void conv2d_input_grad(const double* g, int batch, int out_ch, int out_h,
                       int out_w, const double* weight, int in_ch, int k,
                       int stride, int padding, int in_h, int in_w,
                       double* out);

}  // namespace detail
}  // namespace tn
