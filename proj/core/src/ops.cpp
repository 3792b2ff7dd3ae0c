#include "transnorm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace tn {

namespace {

using detail::TensorPtr;

bool grad_needed(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

std::vector<double>& acc_grad(const TensorPtr& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

// ---- broadcasting ----------------------------------------------------------

struct BcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;  // per-out-axis strides, 0 where broadcast
};

BcastPlan bcast_plan(const Shape& a, const Shape& b, const char* opname) {
  int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  int r = std::max(ra, rb);
  BcastPlan p;
  p.out.resize(r);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  std::vector<std::size_t> stra(ra), strb(rb);
  std::size_t acc = 1;
  for (int i = ra - 1; i >= 0; --i) { stra[i] = acc; acc *= a[i]; }
  acc = 1;
  for (int i = rb - 1; i >= 0; --i) { strb[i] = acc; acc *= b[i]; }
  for (int i = 0; i < r; ++i) {
    int da = (i >= r - ra) ? a[i - (r - ra)] : 1;
    int db = (i >= r - rb) ? b[i - (r - rb)] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(opname) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcast-compatible");
    p.out[i] = std::max(da, db);
    if (da != 1) p.sa[i] = stra[i - (r - ra)];
    if (db != 1) p.sb[i] = strb[i - (r - rb)];
  }
  return p;
}

template <class F>
void bcast_walk(const Shape& out, const std::vector<std::size_t>& sa,
                const std::vector<std::size_t>& sb, F&& f) {
  int r = static_cast<int>(out.size());
  if (r == 0) { f(0, 0, 0); return; }
  std::vector<int> idx(r, 0);
  std::size_t offa = 0, offb = 0;
  std::size_t n = shape_numel(out);
  for (std::size_t lin = 0; lin < n; ++lin) {
    f(lin, offa, offb);
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      offa += sa[ax];
      offb += sb[ax];
      if (idx[ax] < out[ax]) break;
      offa -= sa[ax] * static_cast<std::size_t>(out[ax]);
      offb -= sb[ax] * static_cast<std::size_t>(out[ax]);
      idx[ax] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  BcastPlan p = bcast_plan(a.shape(), b.shape(), name);
  Tensor y = Tensor::zeros(p.out);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* py = y.data().data();
  switch (op) {
    case BinOp::Add:
      bcast_walk(p.out, p.sa, p.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        py[i] = pa[ia] + pb[ib];
      });
      break;
    case BinOp::Sub:
      bcast_walk(p.out, p.sa, p.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        py[i] = pa[ia] - pb[ib];
      });
      break;
    case BinOp::Mul:
      bcast_walk(p.out, p.sa, p.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        py[i] = pa[ia] * pb[ib];
      });
      break;
    case BinOp::Div:
      bcast_walk(p.out, p.sa, p.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        py[i] = pa[ia] / pb[ib];
      });
      break;
  }
  if (grad_needed({&a, &b})) {
    y.set_requires_grad(true);
    auto ai = a.ptr(), bi = b.ptr(), yi = y.ptr();
    GradTape::active()->record([ai, bi, yi, p, op] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      const double* da = ai->data.data();
      const double* db = bi->data.data();
      double* ga = ai->requires_grad ? acc_grad(ai).data() : nullptr;
      double* gb = bi->requires_grad ? acc_grad(bi).data() : nullptr;
      bcast_walk(p.out, p.sa, p.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (op) {
          case BinOp::Add:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] += g[i];
            break;
          case BinOp::Sub:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] -= g[i];
            break;
          case BinOp::Mul:
            if (ga) ga[ia] += g[i] * db[ib];
            if (gb) gb[ib] += g[i] * da[ia];
            break;
          case BinOp::Div:
            if (ga) ga[ia] += g[i] / db[ib];
            if (gb) gb[ib] -= g[i] * da[ia] / (db[ib] * db[ib]);
            break;
        }
      });
    });
  }
  return y;
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd dfdx) {
  Tensor y = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  double* py = y.data().data();
  std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) py[i] = fwd(px[i]);
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, dfdx] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      const double* px = xi->data.data();
      const double* py = yi->data.data();
      double* gx = acc_grad(xi).data();
      std::size_t n = xi->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * dfdx(px[i], py[i]);
    });
  }
  return y;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary(
      x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  Tensor y = Tensor::from(shape, x.data());
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi] {
      if (yi->grad.empty()) return;
      double* gx = acc_grad(xi).data();
      const double* g = yi->grad.data();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

namespace {
std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> str(s.size());
  std::size_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    str[i] = acc;
    acc *= s[i];
  }
  return str;
}

// Destination-linear walk over a permuted view: dst[i] corresponds to
// src[src_offset(i)].
void permute_copy(const Shape& out, const std::vector<std::size_t>& src_stride,
                  const double* src, double* dst, bool scatter_accumulate) {
  int r = static_cast<int>(out.size());
  std::vector<int> idx(r, 0);
  std::size_t off = 0;
  std::size_t n = shape_numel(out);
  for (std::size_t lin = 0; lin < n; ++lin) {
    if (scatter_accumulate)
      dst[off] += src[lin];
    else
      dst[lin] = src[off];
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      off += src_stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= src_stride[ax] * static_cast<std::size_t>(out[ax]);
      idx[ax] = 0;
    }
  }
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw DimensionError("permute: got " + std::to_string(perm.size()) +
                         " axes for rank-" + std::to_string(r) + " tensor");
  std::vector<bool> seen(r, false);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    if (perm[i] < 0 || perm[i] >= r || seen[perm[i]])
      throw DimensionError("permute: invalid axis list");
    seen[perm[i]] = true;
    out[i] = x.shape()[perm[i]];
  }
  auto xstr = row_major_strides(x.shape());
  std::vector<std::size_t> stride(r);
  for (int i = 0; i < r; ++i) stride[i] = xstr[perm[i]];
  Tensor y = Tensor::zeros(out);
  permute_copy(out, stride, x.data().data(), y.data().data(), false);
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, out, stride] {
      if (yi->grad.empty()) return;
      permute_copy(out, stride, yi->grad.data(), acc_grad(xi).data(), true);
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: empty input list");
  int r = xs[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("concat: axis out of range");
  Shape out = xs[0].shape();
  out[axis] = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r)
      throw DimensionError("concat: rank mismatch between " + shape_str(xs[0].shape()) +
                           " and " + shape_str(t.shape()));
    for (int i = 0; i < r; ++i)
      if (i != axis && t.shape()[i] != xs[0].shape()[i])
        throw DimensionError("concat: non-axis dims differ, " + shape_str(xs[0].shape()) +
                             " vs " + shape_str(t.shape()));
    out[axis] += t.shape()[axis];
  }
  Tensor y = Tensor::zeros(out);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out[i];
  for (int i = axis + 1; i < r; ++i) inner *= out[i];
  std::size_t row = static_cast<std::size_t>(out[axis]) * inner;
  std::size_t pos = 0;
  for (const Tensor& t : xs) {
    std::size_t span = static_cast<std::size_t>(t.shape()[axis]) * inner;
    const double* src = t.data().data();
    double* dst = y.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(dst + o * row + pos, src + o * span, span * sizeof(double));
    pos += span;
  }
  bool any = false;
  for (const Tensor& t : xs) any = any || t.requires_grad();
  if (GradTape::active() && any) {
    y.set_requires_grad(true);
    std::vector<TensorPtr> ins;
    for (const Tensor& t : xs) ins.push_back(t.ptr());
    auto yi = y.ptr();
    GradTape::active()->record([ins, yi, outer, inner, row] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      std::size_t pos = 0;
      for (const auto& t : ins) {
        std::size_t span = t->data.size() / outer;
        if (t->requires_grad) {
          double* gt = acc_grad(t).data();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < span; ++i) gt[o * span + i] += g[o * row + pos + i];
        }
        pos += span;
      }
    });
  }
  return y;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi] {
      if (yi->grad.empty()) return;
      double g = yi->grad[0];
      double* gx = acc_grad(xi).data();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  Shape out_shape;
};
AxisSplit axis_split(const Tensor& x, int axis, bool keepdim, const char* op) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError(std::string(op) + ": axis out of range for " + shape_str(x.shape()));
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= x.shape()[i];
  s.len = x.shape()[axis];
  for (int i = axis + 1; i < r; ++i) s.inner *= x.shape()[i];
  for (int i = 0; i < r; ++i) {
    if (i == axis) {
      if (keepdim) s.out_shape.push_back(1);
    } else {
      s.out_shape.push_back(x.shape()[i]);
    }
  }
  if (s.out_shape.empty()) s.out_shape.push_back(1);
  return s;
}
}  // namespace

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  AxisSplit s = axis_split(x, axis, keepdim, "sum_axis");
  Tensor y = Tensor::zeros(s.out_shape);
  const double* px = x.data().data();
  double* py = y.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        py[o * s.inner + i] += px[(o * s.len + l) * s.inner + i];
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, s] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
          for (std::size_t i = 0; i < s.inner; ++i)
            gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return y;
}

Tensor max_axis(const Tensor& x, int axis, bool keepdim) {
  AxisSplit s = axis_split(x, axis, keepdim, "max_axis");
  Tensor y = Tensor::zeros(s.out_shape);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const double* px = x.data().data();
  double* py = y.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = (o * s.len) * s.inner + i;
      double bv = px[best];
      for (std::size_t l = 1; l < s.len; ++l) {
        std::size_t at = (o * s.len + l) * s.inner + i;
        if (px[at] > bv) {
          bv = px[at];
          best = at;
        }
      }
      py[o * s.inner + i] = bv;
      arg[o * s.inner + i] = best;
    }
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, arg] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
    });
  }
  return y;
}

// ---- gemm ------------------------------------------------------------------

namespace detail {

void gemm(int m, int k, int n, const double* a, const double* b, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* __restrict crow = c + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      double av = a[static_cast<std::size_t>(i) * k + l];
      const double* __restrict brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* __restrict brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int l = 0; l < k; ++l) {
    const double* __restrict brow = b + static_cast<std::size_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      double av = a[static_cast<std::size_t>(l) * m + i];
      double* __restrict crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor y = Tensor::zeros({m, n});
  detail::gemm(m, k, n, a.data().data(), b.data().data(), y.data().data(), false);
  if (grad_needed({&a, &b})) {
    y.set_requires_grad(true);
    auto ai = a.ptr(), bi = b.ptr(), yi = y.ptr();
    GradTape::active()->record([ai, bi, yi, m, k, n] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      if (ai->requires_grad)
        detail::gemm_nt(m, n, k, g, bi->data.data(), acc_grad(ai).data(), true);
      if (bi->requires_grad)
        detail::gemm_tn(k, m, n, ai->data.data(), g, acc_grad(bi).data(), true);
    });
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[1])
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int g0 = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  Tensor y = Tensor::zeros({g0, m, n});
  std::size_t as = static_cast<std::size_t>(m) * k, bs = static_cast<std::size_t>(k) * n,
              ys = static_cast<std::size_t>(m) * n;
  for (int gidx = 0; gidx < g0; ++gidx)
    detail::gemm(m, k, n, a.data().data() + gidx * as, b.data().data() + gidx * bs,
                 y.data().data() + gidx * ys, false);
  if (grad_needed({&a, &b})) {
    y.set_requires_grad(true);
    auto ai = a.ptr(), bi = b.ptr(), yi = y.ptr();
    GradTape::active()->record([ai, bi, yi, g0, m, k, n, as, bs, ys] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      for (int gi = 0; gi < g0; ++gi) {
        if (ai->requires_grad)
          detail::gemm_nt(m, n, k, g + gi * ys, bi->data.data() + gi * bs,
                          acc_grad(ai).data() + gi * as, true);
        if (bi->requires_grad)
          detail::gemm_tn(k, m, n, ai->data.data() + gi * as, g + gi * ys,
                          acc_grad(bi).data() + gi * bs, true);
      }
    });
  }
  return y;
}

// ---- convolutions ----------------------------------------------------------

namespace {

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, double* col) {
  // col layout: [c*k*k, oh*ow]
  std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch)
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) {
        double* dst = col + ((static_cast<std::size_t>(ch) * k + u) * k + v) * cols;
        for (int i = 0; i < oh; ++i) {
          int src_i = i * stride + u - pad;
          for (int j = 0; j < ow; ++j) {
            int src_j = j * stride + v - pad;
            dst[static_cast<std::size_t>(i) * ow + j] =
                (src_i >= 0 && src_i < h && src_j >= 0 && src_j < w)
                    ? x[(static_cast<std::size_t>(ch) * h + src_i) * w + src_j]
                    : 0.0;
          }
        }
      }
}

void col2im_acc(const double* col, int c, int h, int w, int k, int stride, int pad,
                int oh, int ow, double* x) {
  std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch)
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) {
        const double* src = col + ((static_cast<std::size_t>(ch) * k + u) * k + v) * cols;
        for (int i = 0; i < oh; ++i) {
          int dst_i = i * stride + u - pad;
          if (dst_i < 0 || dst_i >= h) continue;
          for (int j = 0; j < ow; ++j) {
            int dst_j = j * stride + v - pad;
            if (dst_j < 0 || dst_j >= w) continue;
            x[(static_cast<std::size_t>(ch) * h + dst_i) * w + dst_j] +=
                src[static_cast<std::size_t>(i) * ow + j];
          }
        }
      }
}

struct ConvDims {
  int b, c, h, w, o, k, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int padding) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw DimensionError("conv2d: expected 4-d input and weight, got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  ConvDims d;
  d.b = input.shape()[0];
  d.c = input.shape()[1];
  d.h = input.shape()[2];
  d.w = input.shape()[3];
  d.o = weight.shape()[0];
  d.k = weight.shape()[2];
  if (weight.shape()[1] != d.c || weight.shape()[3] != d.k)
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(input.shape()));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  if (d.k > d.h + 2 * padding || d.k > d.w + 2 * padding)
    throw DimensionError("conv2d: kernel " + std::to_string(d.k) +
                         " larger than padded input " + shape_str(input.shape()) +
                         " with padding " + std::to_string(padding));
  d.oh = (d.h + 2 * padding - d.k) / stride + 1;
  d.ow = (d.w + 2 * padding - d.k) / stride + 1;
  return d;
}

}  // namespace

namespace detail {

void conv2d_input_grad(const double* g, int batch, int out_ch, int out_h, int out_w,
                       const double* weight, int in_ch, int k, int stride, int padding,
                       int in_h, int in_w, double* out) {
  int ckk = in_ch * k * k;
  std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  std::vector<double> dcol(static_cast<std::size_t>(ckk) * cols);
  for (int b = 0; b < batch; ++b) {
    const double* gb = g + static_cast<std::size_t>(b) * out_ch * cols;
    gemm_tn(ckk, out_ch, static_cast<int>(cols), weight, gb, dcol.data(), false);
    col2im_acc(dcol.data(), in_ch, in_h, in_w, k, stride, padding, out_h, out_w,
               out + static_cast<std::size_t>(b) * in_ch * in_h * in_w);
  }
}

}  // namespace detail

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  ConvDims d = conv_dims(input, weight, stride, padding);
  if (!bias.defined() || bias.rank() != 1 || bias.shape()[0] != d.o)
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(d.o) + "]");
  Tensor y = Tensor::zeros({d.b, d.o, d.oh, d.ow});
  int ckk = d.c * d.k * d.k;
  std::size_t cols = static_cast<std::size_t>(d.oh) * d.ow;
  std::vector<double> col(static_cast<std::size_t>(ckk) * cols);
  for (int b = 0; b < d.b; ++b) {
    im2col(input.data().data() + static_cast<std::size_t>(b) * d.c * d.h * d.w, d.c, d.h,
           d.w, d.k, stride, padding, d.oh, d.ow, col.data());
    double* yb = y.data().data() + static_cast<std::size_t>(b) * d.o * cols;
    detail::gemm(d.o, ckk, static_cast<int>(cols), weight.data().data(), col.data(), yb,
                 false);
    for (int o = 0; o < d.o; ++o) {
      double bv = bias.data()[o];
      double* row = yb + static_cast<std::size_t>(o) * cols;
      for (std::size_t j = 0; j < cols; ++j) row[j] += bv;
    }
  }
  if (grad_needed({&input, &weight, &bias})) {
    y.set_requires_grad(true);
    auto xi = input.ptr(), wi = weight.ptr(), bi = bias.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, wi, bi, yi, d, stride, padding, ckk, cols] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      if (bi->requires_grad) {
        double* gb = acc_grad(bi).data();
        for (int b = 0; b < d.b; ++b)
          for (int o = 0; o < d.o; ++o) {
            const double* row = g + (static_cast<std::size_t>(b) * d.o + o) * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += row[j];
            gb[o] += s;
          }
      }
      if (wi->requires_grad) {
        double* gw = acc_grad(wi).data();
        std::vector<double> col(static_cast<std::size_t>(ckk) * cols);
        for (int b = 0; b < d.b; ++b) {
          im2col(xi->data.data() + static_cast<std::size_t>(b) * d.c * d.h * d.w, d.c,
                 d.h, d.w, d.k, stride, padding, d.oh, d.ow, col.data());
          detail::gemm_nt(d.o, static_cast<int>(cols), ckk,
                          g + static_cast<std::size_t>(b) * d.o * cols, col.data(), gw,
                          true);
        }
      }
      if (xi->requires_grad)
        detail::conv2d_input_grad(g, d.b, d.o, d.oh, d.ow, wi->data.data(), d.c, d.k,
                                  stride, padding, d.h, d.w, acc_grad(xi).data());
    });
  }
  return y;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, int stride) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw DimensionError("conv_transpose2d: expected 4-d input and weight, got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  if (stride < 1) throw DimensionError("conv_transpose2d: stride must be >= 1");
  int b = input.shape()[0], cin = input.shape()[1], h = input.shape()[2],
      w = input.shape()[3];
  int cout = weight.shape()[1], k = weight.shape()[2];
  if (weight.shape()[0] != cin || weight.shape()[3] != k)
    throw DimensionError("conv_transpose2d: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(input.shape()));
  int oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  Tensor y = Tensor::zeros({b, cout, oh, ow});
  detail::conv2d_input_grad(input.data().data(), b, cin, h, w, weight.data().data(),
                            cout, k, stride, 0, oh, ow, y.data().data());
  if (grad_needed({&input, &weight})) {
    y.set_requires_grad(true);
    auto xi = input.ptr(), wi = weight.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, wi, yi, b, cin, cout, h, w, k, oh, ow, stride] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      int ckk = cout * k * k;
      std::size_t cols = static_cast<std::size_t>(h) * w;
      std::vector<double> col(static_cast<std::size_t>(ckk) * cols);
      for (int bi2 = 0; bi2 < b; ++bi2) {
        im2col(g + static_cast<std::size_t>(bi2) * cout * oh * ow, cout, oh, ow, k,
               stride, 0, h, w, col.data());
        if (xi->requires_grad)
          detail::gemm(cin, ckk, static_cast<int>(cols), wi->data.data(), col.data(),
                       acc_grad(xi).data() + static_cast<std::size_t>(bi2) * cin * cols,
                       true);
        if (wi->requires_grad)
          detail::gemm_nt(cin, static_cast<int>(cols), ckk,
                          xi->data.data() + static_cast<std::size_t>(bi2) * cin * cols,
                          col.data(), acc_grad(wi).data(), true);
      }
    });
  }
  return y;
}

Tensor max_pool2d(const Tensor& input, int window) {
  if (input.rank() != 4)
    throw DimensionError("max_pool2d: expected 4-d input, got " + shape_str(input.shape()));
  if (window < 1) throw DimensionError("max_pool2d: window must be >= 1");
  int b = input.shape()[0], c = input.shape()[1], h = input.shape()[2],
      w = input.shape()[3];
  if (h % window != 0 || w % window != 0)
    throw DimensionError("max_pool2d: input " + shape_str(input.shape()) +
                         " not divisible by window " + std::to_string(window));
  int oh = h / window, ow = w / window;
  Tensor y = Tensor::zeros({b, c, oh, ow});
  std::vector<std::size_t> arg(y.numel());
  const double* px = input.data().data();
  double* py = y.data().data();
  std::size_t oi = 0;
  for (int bi2 = 0; bi2 < b; ++bi2)
    for (int ci = 0; ci < c; ++ci) {
      const double* plane = px + (static_cast<std::size_t>(bi2) * c + ci) * h * w;
      std::size_t base = (static_cast<std::size_t>(bi2) * c + ci) * h * w;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++oi) {
          std::size_t best = static_cast<std::size_t>(i * window) * w + j * window;
          double bv = plane[best];
          for (int u = 0; u < window; ++u)
            for (int v = 0; v < window; ++v) {
              std::size_t at = static_cast<std::size_t>(i * window + u) * w +
                               (j * window + v);
              if (plane[at] > bv) {
                bv = plane[at];
                best = at;
              }
            }
          py[oi] = bv;
          arg[oi] = base + best;
        }
    }
  if (grad_needed({&input})) {
    y.set_requires_grad(true);
    auto xi = input.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, arg] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
    });
  }
  return y;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 4)
    throw DimensionError("global_avg_pool: expected 4-d input, got " +
                         shape_str(input.shape()));
  int b = input.shape()[0], c = input.shape()[1];
  std::size_t hw = static_cast<std::size_t>(input.shape()[2]) * input.shape()[3];
  Tensor y = Tensor::zeros({b, c});
  const double* px = input.data().data();
  double* py = y.data().data();
  for (int i = 0; i < b * c; ++i) {
    double s = 0.0;
    const double* plane = px + static_cast<std::size_t>(i) * hw;
    for (std::size_t j = 0; j < hw; ++j) s += plane[j];
    py[i] = s / static_cast<double>(hw);
  }
  if (grad_needed({&input})) {
    y.set_requires_grad(true);
    auto xi = input.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, hw] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t i = 0; i < yi->data.size(); ++i) {
        double gv = g[i] * inv;
        double* plane = gx + i * hw;
        for (std::size_t j = 0; j < hw; ++j) plane[j] += gv;
      }
    });
  }
  return y;
}

// ---- normalization ---------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  int d = x.dim(-1);
  if (gain.rank() != 1 || gain.shape()[0] != d || shift.rank() != 1 ||
      shift.shape()[0] != d)
    throw DimensionError("layer_norm: gain/shift must be [" + std::to_string(d) +
                         "], got " + shape_str(gain.shape()) + " and " +
                         shape_str(shift.shape()));
  std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  Tensor y = Tensor::zeros(x.shape());
  std::vector<double> mu(rows), invstd(rows);
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* ps = shift.data().data();
  double* py = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) v += (row[j] - m) * (row[j] - m);
    v /= d;
    mu[r] = m;
    invstd[r] = 1.0 / std::sqrt(v + eps);
    double* out = py + r * d;
    for (int j = 0; j < d; ++j) out[j] = (row[j] - m) * invstd[r] * pg[j] + ps[j];
  }
  if (grad_needed({&x, &gain, &shift})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), gi = gain.ptr(), si = shift.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, gi, si, yi, mu, invstd, d] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      const double* px = xi->data.data();
      const double* pg = gi->data.data();
      std::size_t rows = xi->data.size() / static_cast<std::size_t>(d);
      double* gx = xi->requires_grad ? acc_grad(xi).data() : nullptr;
      double* gg = gi->requires_grad ? acc_grad(gi).data() : nullptr;
      double* gs = si->requires_grad ? acc_grad(si).data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xrow = px + r * d;
        const double* grow = g + r * d;
        double mean_gh = 0.0, mean_ghx = 0.0;
        for (int j = 0; j < d; ++j) {
          double xhat = (xrow[j] - mu[r]) * invstd[r];
          double gh = grow[j] * pg[j];
          mean_gh += gh;
          mean_ghx += gh * xhat;
          if (gg) gg[j] += grow[j] * xhat;
          if (gs) gs[j] += grow[j];
        }
        mean_gh /= d;
        mean_ghx /= d;
        if (gx) {
          double* gxrow = gx + r * d;
          for (int j = 0; j < d; ++j) {
            double xhat = (xrow[j] - mu[r]) * invstd[r];
            double gh = grow[j] * pg[j];
            gxrow[j] += invstd[r] * (gh - mean_gh - xhat * mean_ghx);
          }
        }
      }
    });
  }
  return y;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum, double eps) {
  if (x.rank() != 4)
    throw DimensionError("batch_norm: expected 4-d input, got " + shape_str(x.shape()));
  int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("batch_norm: gamma/beta must be [" + std::to_string(c) + "]");
  if (state.running_mean.size() != static_cast<std::size_t>(c))
    throw ConfigError("batch_norm: state sized for " +
                      std::to_string(state.running_mean.size()) + " channels, input has " +
                      std::to_string(c));
  std::size_t n = static_cast<std::size_t>(b) * h * w;
  if (training && n < 2)
    throw ContractError("batch_norm: training mode requires B*H*W >= 2, got " +
                        shape_str(x.shape()));
  if (!training && state.batches_seen == 0)
    throw ContractError("batch_norm: inference requested before any training-mode call "
                        "(running statistics uninitialized)");

  std::vector<double> mu(c), var(c);
  const double* px = x.data().data();
  std::size_t hw = static_cast<std::size_t>(h) * w;
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double m = 0.0;
      for (int bi2 = 0; bi2 < b; ++bi2) {
        const double* plane = px + (static_cast<std::size_t>(bi2) * c + ci) * hw;
        for (std::size_t j = 0; j < hw; ++j) m += plane[j];
      }
      m /= static_cast<double>(n);
      double v = 0.0;
      for (int bi2 = 0; bi2 < b; ++bi2) {
        const double* plane = px + (static_cast<std::size_t>(bi2) * c + ci) * hw;
        for (std::size_t j = 0; j < hw; ++j) v += (plane[j] - m) * (plane[j] - m);
      }
      v /= static_cast<double>(n);
      mu[ci] = m;
      var[ci] = v;
      double unbiased = v * static_cast<double>(n) / static_cast<double>(n - 1);
      state.running_mean[ci] = (1.0 - momentum) * state.running_mean[ci] + momentum * m;
      state.running_var[ci] = (1.0 - momentum) * state.running_var[ci] + momentum * unbiased;
    }
    state.batches_seen++;
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> invstd(c);
  for (int ci = 0; ci < c; ++ci) invstd[ci] = 1.0 / std::sqrt(var[ci] + eps);

  Tensor y = Tensor::zeros(x.shape());
  double* py = y.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  for (int bi2 = 0; bi2 < b; ++bi2)
    for (int ci = 0; ci < c; ++ci) {
      const double* in = px + (static_cast<std::size_t>(bi2) * c + ci) * hw;
      double* out = py + (static_cast<std::size_t>(bi2) * c + ci) * hw;
      double scale = pg[ci] * invstd[ci];
      double shift = pb[ci] - mu[ci] * scale;
      for (std::size_t j = 0; j < hw; ++j) out[j] = in[j] * scale + shift;
    }

  if (grad_needed({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), gi = gamma.ptr(), bi3 = beta.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, gi, bi3, yi, mu, invstd, training, b, c, hw, n] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      const double* px = xi->data.data();
      const double* pg = gi->data.data();
      double* gx = xi->requires_grad ? acc_grad(xi).data() : nullptr;
      double* gg = gi->requires_grad ? acc_grad(gi).data() : nullptr;
      double* gb = bi3->requires_grad ? acc_grad(bi3).data() : nullptr;
      for (int ci = 0; ci < c; ++ci) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int bi2 = 0; bi2 < b; ++bi2) {
          const double* grow = g + (static_cast<std::size_t>(bi2) * c + ci) * hw;
          const double* xrow = px + (static_cast<std::size_t>(bi2) * c + ci) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            sum_g += grow[j];
            sum_gx += grow[j] * (xrow[j] - mu[ci]) * invstd[ci];
          }
        }
        if (gg) gg[ci] += sum_gx;
        if (gb) gb[ci] += sum_g;
        if (!gx) continue;
        double mg = sum_g / static_cast<double>(n);
        double mgx = sum_gx / static_cast<double>(n);
        for (int bi2 = 0; bi2 < b; ++bi2) {
          const double* grow = g + (static_cast<std::size_t>(bi2) * c + ci) * hw;
          const double* xrow = px + (static_cast<std::size_t>(bi2) * c + ci) * hw;
          double* gxrow = gx + (static_cast<std::size_t>(bi2) * c + ci) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            double xhat = (xrow[j] - mu[ci]) * invstd[ci];
            if (training)
              gxrow[j] += pg[ci] * invstd[ci] * (grow[j] - mg - xhat * mgx);
            else
              gxrow[j] += pg[ci] * invstd[ci] * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& x) {
  int d = x.dim(-1);
  std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  Tensor y = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  double* py = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double m = row[0];
    for (int j = 1; j < d; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    double* out = py + r * d;
    for (int j = 0; j < d; ++j) {
      out[j] = std::exp(row[j] - m);
      s += out[j];
    }
    double inv = 1.0 / s;
    for (int j = 0; j < d; ++j) out[j] *= inv;
  }
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, d] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      const double* p = yi->data.data();
      double* gx = acc_grad(xi).data();
      std::size_t rows = xi->data.size() / static_cast<std::size_t>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* prow = p + r * d;
        const double* grow = g + r * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += grow[j] * prow[j];
        double* gxrow = gx + r * d;
        for (int j = 0; j < d; ++j) gxrow[j] += prow[j] * (grow[j] - dot);
      }
    });
  }
  return y;
}

// ---- interpolation ---------------------------------------------------------

namespace {
struct LerpTap {
  int i0, i1;
  double w0, w1;
};
std::vector<LerpTap> lerp_taps(int in, int out, int factor) {
  std::vector<LerpTap> taps(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    double f = std::floor(src);
    double t = src - f;
    int i0 = static_cast<int>(f);
    int i1 = i0 + 1;
    i0 = std::clamp(i0, 0, in - 1);
    i1 = std::clamp(i1, 0, in - 1);
    taps[o] = {i0, i1, 1.0 - t, t};
  }
  return taps;
}
}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (x.rank() != 4)
    throw DimensionError("bilinear_upsample: expected 4-d input, got " +
                         shape_str(x.shape()));
  if (factor < 1) throw DimensionError("bilinear_upsample: factor must be >= 1");
  if (factor == 1) return reshape(x, x.shape());
  int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  int oh = h * factor, ow = w * factor;
  auto rows = lerp_taps(h, oh, factor);
  auto colt = lerp_taps(w, ow, factor);
  Tensor y = Tensor::zeros({b, c, oh, ow});
  const double* px = x.data().data();
  double* py = y.data().data();
  for (int p = 0; p < b * c; ++p) {
    const double* in = px + static_cast<std::size_t>(p) * h * w;
    double* out = py + static_cast<std::size_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const LerpTap& ri = rows[i];
      for (int j = 0; j < ow; ++j) {
        const LerpTap& cj = colt[j];
        out[static_cast<std::size_t>(i) * ow + j] =
            ri.w0 * (cj.w0 * in[static_cast<std::size_t>(ri.i0) * w + cj.i0] +
                     cj.w1 * in[static_cast<std::size_t>(ri.i0) * w + cj.i1]) +
            ri.w1 * (cj.w0 * in[static_cast<std::size_t>(ri.i1) * w + cj.i0] +
                     cj.w1 * in[static_cast<std::size_t>(ri.i1) * w + cj.i1]);
      }
    }
  }
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, rows, colt, b, c, h, w, oh, ow] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      for (int p = 0; p < b * c; ++p) {
        double* gin = gx + static_cast<std::size_t>(p) * h * w;
        const double* gout = g + static_cast<std::size_t>(p) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const LerpTap& ri = rows[i];
          for (int j = 0; j < ow; ++j) {
            const LerpTap& cj = colt[j];
            double gv = gout[static_cast<std::size_t>(i) * ow + j];
            gin[static_cast<std::size_t>(ri.i0) * w + cj.i0] += gv * ri.w0 * cj.w0;
            gin[static_cast<std::size_t>(ri.i0) * w + cj.i1] += gv * ri.w0 * cj.w1;
            gin[static_cast<std::size_t>(ri.i1) * w + cj.i0] += gv * ri.w1 * cj.w0;
            gin[static_cast<std::size_t>(ri.i1) * w + cj.i1] += gv * ri.w1 * cj.w1;
          }
        }
      }
    });
  }
  return y;
}

Tensor gather_index(const Tensor& x, const std::vector<int>& index) {
  if (x.rank() != 2)
    throw DimensionError("gather_index: expected 2-d input, got " + shape_str(x.shape()));
  int m = x.shape()[0], k = x.shape()[1];
  if (static_cast<int>(index.size()) != m)
    throw DimensionError("gather_index: index length " + std::to_string(index.size()) +
                         " does not match rows " + std::to_string(m));
  Tensor y = Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    if (index[i] < 0 || index[i] >= k)
      throw ContractError("gather_index: index " + std::to_string(index[i]) +
                          " out of range [0," + std::to_string(k) + ")");
    y.data()[i] = x.data()[static_cast<std::size_t>(i) * k + index[i]];
  }
  if (grad_needed({&x})) {
    y.set_requires_grad(true);
    auto xi = x.ptr(), yi = y.ptr();
    GradTape::active()->record([xi, yi, index, k] {
      if (yi->grad.empty()) return;
      const double* g = yi->grad.data();
      double* gx = acc_grad(xi).data();
      for (std::size_t i = 0; i < index.size(); ++i)
        gx[i * k + index[i]] += g[i];
    });
  }
  return y;
}

Tensor one_hot(const std::vector<int>& ids, int num_classes) {
  Tensor y = Tensor::zeros({static_cast<int>(ids.size()), num_classes});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= num_classes)
      throw ContractError("one_hot: class id " + std::to_string(ids[i]) +
                          " out of range [0," + std::to_string(num_classes) + ")");
    y.data()[i * num_classes + ids[i]] = 1.0;
  }
  return y;
}

}  // namespace tn
