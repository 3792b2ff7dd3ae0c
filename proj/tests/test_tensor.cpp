#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "transnorm/gradcheck.hpp"
#include "transnorm/ops.hpp"

using namespace tn;
using testutil::check_grads;

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);

  // reshape . reshape is the identity on data
  Tensor r = reshape(reshape(t, {6}), {2, 3});
  CHECK(testutil::bitwise_equal(r, t));
}

TEST_CASE("matmul forward examples") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {3.5, -2, 0.25, 9});
  CHECK(testutil::bitwise_equal(matmul(eye, m), m));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {5, 6});
  Tensor y = matmul(a, b);
  CHECK(y.at({0, 0}) == 17.0);
  CHECK(y.at({1, 0}) == 39.0);

  CHECK_THROWS_WITH_AS(matmul(a, Tensor::zeros({3, 2})), doctest::Contains("[2x2]"),
                       DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(101);
  Tensor a = Tensor::uniform({3, 4}, rng, -1, 1);
  Tensor b = Tensor::uniform({4, 2}, rng, -1, 1);
  double err = check_grads([&] { return matmul(a, b); }, {a, b}, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("backward contract") {
  Rng rng(5);
  Tensor x = Tensor::uniform({3, 3}, rng, -1, 1).set_requires_grad(true);
  // loss = sum(x) -> grad all ones
  {
    GradTape tape;
    Tensor loss = sum(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  // x used twice additively -> grad doubled
  x.zero_grad();
  {
    GradTape tape;
    Tensor loss = sum(add(x, x));
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 2.0);

  // non-scalar loss rejected
  {
    GradTape tape;
    Tensor y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
}

TEST_CASE("gradient accumulation splits exactly across terms") {
  Rng rng(17);
  Tensor x = Tensor::uniform({4}, rng, -1, 1);
  Tensor w1 = Tensor::uniform({4}, rng, -1, 1);
  Tensor w2 = Tensor::uniform({4}, rng, -1, 1);

  auto grad_of = [&](const std::function<Tensor()>& f) {
    x.set_requires_grad(true);
    x.zero_grad();
    GradTape tape;
    tape.backward(sum(f()));
    return x.grad();
  };
  auto gf = grad_of([&] { return mul(x, w1); });
  auto gg = grad_of([&] { return mul(x, w2); });
  auto gboth = grad_of([&] { return add(mul(x, w1), mul(x, w2)); });
  for (std::size_t i = 0; i < 4; ++i) CHECK(gboth[i] == gf[i] + gg[i]);
}

TEST_CASE("conv2d identity kernel and shape formula") {
  Rng rng(3);
  Tensor x = Tensor::uniform({1, 1, 4, 4}, rng, 0, 1);
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor b = Tensor::zeros({1});
  CHECK(testutil::bitwise_equal(conv2d(x, w, b, 1, 0), x));

  Tensor x5 = Tensor::uniform({1, 1, 5, 5}, rng, 0, 1);
  Tensor w3 = Tensor::uniform({1, 1, 3, 3}, rng, -1, 1);
  Tensor y = conv2d(x5, w3, b, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 5, 5});

  // kernel larger than padded input
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}),
                         Tensor::zeros({1}), 1, 0),
                  DimensionError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(23);
  Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
  Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
  Tensor b = Tensor::uniform({3}, rng, -1, 1);
  double err = check_grads([&] { return conv2d(x, w, b, 1, 1); }, {x, w, b}, rng);
  CHECK(err < 1e-6);
  // strided case
  Tensor w2 = Tensor::uniform({2, 2, 2, 2}, rng, -1, 1);
  Tensor b2 = Tensor::uniform({2}, rng, -1, 1);
  double err2 = check_grads([&] { return conv2d(x, w2, b2, 2, 0); }, {x, w2, b2}, rng);
  CHECK(err2 < 1e-6);
}

TEST_CASE("conv_transpose2d shape and adjoint identity") {
  Rng rng(31);
  Tensor x = Tensor::uniform({1, 1, 2, 2}, rng, -1, 1);
  Tensor w = Tensor::uniform({1, 1, 2, 2}, rng, -1, 1);
  CHECK(conv_transpose2d(x, w, 2).shape() == Shape{1, 1, 4, 4});

  // forward(conv_transpose) == backward-input(conv) bit for bit
  Tensor g = Tensor::uniform({2, 3, 5, 5}, rng, -1, 1);
  Tensor wk = Tensor::uniform({3, 4, 3, 3}, rng, -1, 1);
  Tensor up = conv_transpose2d(g, wk, 2);  // [2,4,11,11]

  Tensor probe = Tensor::uniform({2, 4, 11, 11}, rng, -1, 1).set_requires_grad(true);
  {
    GradTape tape;
    Tensor y = conv2d(probe, wk, Tensor::zeros({3}), 2, 0);
    tape.backward(sum(mul(y, g)));
  }
  Tensor dinput = Tensor::from({2, 4, 11, 11}, probe.grad());
  CHECK(testutil::bitwise_equal(up, dinput));
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
  Rng rng(37);
  Tensor x = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1);
  Tensor w = Tensor::uniform({2, 3, 2, 2}, rng, -1, 1);
  double err = check_grads([&] { return conv_transpose2d(x, w, 2); }, {x, w}, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("max_pool2d examples") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = max_pool2d(x, 2);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4.0);

  Tensor c = Tensor::full({1, 2, 4, 4}, 0.7);
  Tensor yc = max_pool2d(c, 2);
  for (double v : yc.data()) CHECK(v == 0.7);

  CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 1, 5, 5}), 2), DimensionError);
}

TEST_CASE("max_pool2d tie-break routes to first row-major element") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {5, 5, 5, 5}).set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(sum(max_pool2d(x, 2)));
  }
  CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("max_pool2d gradient with unique maxima") {
  Rng rng(41);
  Tensor x = Tensor::uniform({2, 2, 4, 4}, rng, -1, 1);
  double err = check_grads([&] { return max_pool2d(x, 2); }, {x}, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("global_avg_pool examples and gradient") {
  Tensor c = Tensor::full({2, 3, 4, 4}, 1.25);
  Tensor yc = global_avg_pool(c);
  CHECK(yc.shape() == Shape{2, 3});
  for (double v : yc.data()) CHECK(v == 1.25);

  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(x).item() == doctest::Approx(2.5).epsilon(1e-15));

  Rng rng(43);
  Tensor xr = Tensor::uniform({2, 3, 3, 3}, rng, -1, 1);
  double err = check_grads([&] { return global_avg_pool(xr); }, {xr}, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm examples") {
  // constant row -> all zeros (variance absorbed by eps)
  Tensor x = Tensor::full({2, 5}, 3.7);
  Tensor gain = Tensor::ones({5});
  Tensor shift = Tensor::zeros({5});
  Tensor y = layer_norm(x, gain, shift, 1e-5);
  for (double v : y.data()) CHECK(std::abs(v) < 1e-9);

  // per-row mean ~ shift, std ~ gain
  Rng rng(47);
  Tensor xr = Tensor::uniform({4, 64}, rng, -2, 2);
  Tensor g2 = Tensor::full({64}, 1.5);
  Tensor s2 = Tensor::full({64}, 0.25);
  Tensor yr = layer_norm(xr, g2, s2, 1e-10);
  for (int r = 0; r < 4; ++r) {
    double m = 0, var = 0;
    for (int j = 0; j < 64; ++j) m += yr.at({r, j});
    m /= 64;
    for (int j = 0; j < 64; ++j) var += (yr.at({r, j}) - m) * (yr.at({r, j}) - m);
    var /= 64;
    CHECK(m == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(1.5).epsilon(1e-6));
  }
  CHECK_THROWS_AS(layer_norm(x, gain, shift, 0.0), ContractError);
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(53);
  Tensor x = Tensor::uniform({3, 8}, rng, -1, 1);
  Tensor gain = Tensor::uniform({8}, rng, 0.5, 1.5);
  Tensor shift = Tensor::uniform({8}, rng, -0.5, 0.5);
  double err = check_grads([&] { return layer_norm(x, gain, shift, 1e-5); },
                           {x, gain, shift}, rng);
  CHECK(err < 1e-5);
}

TEST_CASE("batch_norm training statistics and modes") {
  Rng rng(59);
  Tensor x = Tensor::randn({4, 3, 8, 8}, rng);
  Tensor gamma = Tensor::ones({3});
  Tensor beta = Tensor::zeros({3});
  BatchNormState state{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0), 0};

  CHECK_THROWS_AS(batch_norm(x, gamma, beta, state, false), ContractError);

  Tensor y = batch_norm(x, gamma, beta, state, true);
  std::size_t hw = 64;
  for (int c = 0; c < 3; ++c) {
    double m = 0, var = 0;
    for (int b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < hw; ++p) m += y.data()[(b * 3 + c) * hw + p];
    m /= 4 * hw;
    for (int b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        double d = y.data()[(b * 3 + c) * hw + p] - m;
        var += d * d;
      }
    var /= 4 * hw;
    CHECK(std::abs(m) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shaves var/(var+eps)
  }
  CHECK(state.batches_seen == 1);

  // degenerate single-value batch rejected in training mode
  BatchNormState s1{std::vector<double>(1, 0.0), std::vector<double>(1, 1.0), 0};
  CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 1, 1, 1}), Tensor::ones({1}),
                             Tensor::zeros({1}), s1, true),
                  ContractError);
}

TEST_CASE("batch_norm gradient matches finite differences") {
  Rng rng(61);
  Tensor x = Tensor::uniform({2, 2, 3, 3}, rng, -1, 1);
  Tensor gamma = Tensor::uniform({2}, rng, 0.5, 1.5);
  Tensor beta = Tensor::uniform({2}, rng, -0.5, 0.5);
  BatchNormState state{std::vector<double>(2, 0.0), std::vector<double>(2, 1.0), 0};
  double err = check_grads([&] { return batch_norm(x, gamma, beta, state, true); },
                           {x, gamma, beta}, rng);
  CHECK(err < 1e-5);
}

TEST_CASE("softmax examples and stability") {
  Tensor u = Tensor::full({1, 4}, 2.0);
  Tensor yu = softmax(u);
  for (double v : yu.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor big = Tensor::from({1, 2}, {1000.0, 0.0});
  Tensor yb = softmax(big);
  CHECK(yb.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(yb.at({0, 1}) < 1e-300);
  CHECK(yb.all_finite());

  Rng rng(67);
  Tensor xr = Tensor::uniform({5, 7}, rng, -3, 3);
  Tensor yr = softmax(xr);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      double v = yr.at({r, j});
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(71);
  Tensor x = Tensor::uniform({4, 6}, rng, -2, 2);
  double err = check_grads([&] { return softmax(x); }, {x}, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise and shape op examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Tensor a = Tensor::zeros({1, 2, 4, 4});
  Tensor b = Tensor::zeros({1, 3, 4, 4});
  CHECK(concat({a, b}, 1).shape() == Shape{1, 5, 4, 4});
  CHECK_THROWS_AS(concat({a, Tensor::zeros({1, 3, 2, 4})}, 1), DimensionError);

  // bilinear upsample of a constant map stays constant
  Tensor c = Tensor::full({1, 1, 3, 3}, 0.37);
  Tensor up = bilinear_upsample(c, 2);
  CHECK(up.shape() == Shape{1, 1, 6, 6});
  for (double v : up.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  Rng rng(73);
  Tensor p = Tensor::uniform({2, 3, 4}, rng, -1, 1);
  Tensor pp = permute(permute(p, {2, 0, 1}), {1, 2, 0});
  CHECK(testutil::bitwise_equal(pp, p));
}

TEST_CASE("elementwise gradients") {
  Rng rng(79);
  Tensor x = Tensor::uniform({3, 4}, rng, -2, 2);
  CHECK(check_grads([&] { return sigmoid(x); }, {x}, rng) < 1e-6);
  CHECK(check_grads([&] { return gelu(x); }, {x}, rng) < 1e-6);
  Tensor xp = Tensor::uniform({3, 4}, rng, 0.5, 2.0);
  CHECK(check_grads([&] { return log(xp); }, {xp}, rng) < 1e-6);
  CHECK(check_grads([&] { return exp(x); }, {x}, rng) < 1e-6);
  // relu away from the kink
  Tensor xo = Tensor::uniform({3, 4}, rng, 0.1, 1.0);
  Tensor xn = Tensor::uniform({3, 4}, rng, -1.0, -0.1);
  CHECK(check_grads([&] { return relu(xo); }, {xo}, rng) < 1e-6);
  CHECK(check_grads([&] { return relu(xn); }, {xn}, rng) < 1e-6);
}

TEST_CASE("broadcast binary ops and gradients") {
  Rng rng(83);
  Tensor a = Tensor::uniform({2, 3, 2, 2}, rng, -1, 1);
  Tensor chan = Tensor::uniform({2, 3, 1, 1}, rng, 0.5, 1.0);
  Tensor spat = Tensor::uniform({2, 1, 2, 2}, rng, 0.5, 1.0);
  Tensor y = mul(chan, a);
  CHECK(y.shape() == a.shape());
  CHECK(y.at({1, 2, 0, 1}) == a.at({1, 2, 0, 1}) * chan.at({1, 2, 0, 0}));

  CHECK(check_grads([&] { return mul(chan, a); }, {a, chan}, rng) < 1e-6);
  CHECK(check_grads([&] { return mul(spat, a); }, {a, spat}, rng) < 1e-6);
  Tensor bias = Tensor::uniform({4}, rng, -1, 1);
  Tensor rows = Tensor::uniform({5, 4}, rng, -1, 1);
  CHECK(check_grads([&] { return add(rows, bias); }, {rows, bias}, rng) < 1e-6);
  Tensor den = Tensor::uniform({5, 4}, rng, 0.5, 2.0);
  CHECK(check_grads([&] { return div(rows, den); }, {rows, den}, rng) < 1e-6);

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
}

TEST_CASE("reduction ops and gradients") {
  Rng rng(89);
  Tensor x = Tensor::uniform({3, 4, 2}, rng, -1, 1);
  CHECK(sum_axis(x, 1).shape() == Shape{3, 2});
  CHECK(sum_axis(x, 1, true).shape() == Shape{3, 1, 2});
  CHECK(check_grads([&] { return sum_axis(x, 1); }, {x}, rng) < 1e-6);
  CHECK(check_grads([&] { return max_axis(x, 2); }, {x}, rng) < 1e-6);
  double total = 0;
  for (double v : x.data()) total += v;
  CHECK(sum(x).item() == doctest::Approx(total).epsilon(1e-12));
  CHECK(mean(x).item() == doctest::Approx(total / 24).epsilon(1e-12));
}

TEST_CASE("bmm matches per-slice matmul and gradients") {
  Rng rng(97);
  Tensor a = Tensor::uniform({3, 2, 4}, rng, -1, 1);
  Tensor b = Tensor::uniform({3, 4, 5}, rng, -1, 1);
  Tensor y = bmm(a, b);
  CHECK(y.shape() == Shape{3, 2, 5});
  for (int g = 0; g < 3; ++g) {
    Tensor as = Tensor::zeros({2, 4}), bs = Tensor::zeros({4, 5});
    std::copy_n(a.data().begin() + g * 8, 8, as.data().begin());
    std::copy_n(b.data().begin() + g * 20, 20, bs.data().begin());
    Tensor ys = matmul(as, bs);
    for (int i = 0; i < 10; ++i) CHECK(y.data()[g * 10 + i] == ys.data()[i]);
  }
  CHECK(check_grads([&] { return bmm(a, b); }, {a, b}, rng) < 1e-6);
}

TEST_CASE("fd_gradient sanity on analytic functions") {
  // f = sum of squares at [1,2] -> [2,4]
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  auto f = [](const Tensor& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return s;
  };
  Tensor g = fd_gradient(f, x, 1e-5);
  CHECK(g.data()[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g.data()[1] == doctest::Approx(4.0).epsilon(1e-8));

  // f(x) = x^3 at 2 -> 12
  Tensor x2 = Tensor::scalar(2.0);
  auto cube = [](const Tensor& t) { return t.item() * t.item() * t.item(); };
  CHECK(fd_gradient(cube, x2, 1e-5).item() == doctest::Approx(12.0).epsilon(1e-6));

  CHECK_THROWS_AS(fd_gradient(cube, x2, 0.0), ContractError);
}

TEST_CASE("gather_index and one_hot") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = gather_index(x, {2, 0});
  CHECK(y.data() == std::vector<double>{3, 4});
  CHECK_THROWS_AS(gather_index(x, {3, 0}), ContractError);

  Tensor oh = one_hot({1, 0, 2}, 3);
  CHECK(oh.at({0, 1}) == 1.0);
  CHECK(oh.at({1, 0}) == 1.0);
  CHECK(oh.at({2, 2}) == 1.0);
  CHECK(sum(oh).item() == 3.0);

  Rng rng(103);
  Tensor xr = Tensor::uniform({4, 3}, rng, -1, 1);
  CHECK(check_grads([&] { return gather_index(xr, {0, 2, 1, 1}); }, {xr}, rng) < 1e-6);
}
