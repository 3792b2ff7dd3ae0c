#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "transnorm/attention_gate.hpp"

using namespace tn;
using testutil::check_grads;

TEST_CASE("channel attention squashes to (0,1) and honors the zero case") {
  AttentionGate gate(8, 4, true, true, 3, "g");
  Rng rng(1);
  Tensor f = Tensor::uniform({2, 8, 4, 4}, rng, -2, 2);

  // W2 = 0, bias 0 -> sigmoid(0) = 0.5 everywhere
  AttentionGate zero_gate(8, 4, true, true, 3, "g");
  std::fill(zero_gate.excite().w.data().begin(), zero_gate.excite().w.data().end(), 0.0);
  std::fill(zero_gate.excite().b.data().begin(), zero_gate.excite().b.data().end(), 0.0);
  Tensor wc0 = channel_attention(f, zero_gate);
  CHECK(wc0.shape() == Shape{2, 8, 1, 1});
  for (double v : wc0.data()) CHECK(v == 0.5);

  Tensor wc = channel_attention(f, gate);
  for (double v : wc.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  CHECK_THROWS_AS(AttentionGate(6, 4, true, true, 3, "g"), ConfigError);
}

TEST_CASE("channel attention gradient matches finite differences") {
  AttentionGate gate(8, 2, true, true, 5, "g");
  Rng rng(7);
  Tensor f = Tensor::uniform({1, 8, 3, 3}, rng, -1, 1);
  std::vector<Tensor> inputs = {f, gate.squeeze().w, gate.squeeze().b, gate.excite().w,
                                gate.excite().b};
  double err = check_grads([&] { return channel_attention(f, gate); }, inputs, rng);
  CHECK(err < 1e-5);
}

TEST_CASE("apply_gate neutral and annihilating spatial maps") {
  AttentionGate gate(4, 2, true, true, 9, "g");
  Rng rng(11);
  Tensor f = Tensor::uniform({1, 4, 3, 3}, rng, -1, 1);

  // spatial map of ones with channel weights forced to 1 -> identity
  AttentionGate spatial_only(4, 2, false, true, 9, "g");
  Tensor ones = Tensor::ones({1, 1, 3, 3});
  CHECK(testutil::bitwise_equal(apply_gate(f, ones, spatial_only), f));

  // zero map annihilates
  Tensor zeros = Tensor::zeros({1, 1, 3, 3});
  Tensor out = apply_gate(f, zeros, gate);
  for (double v : out.data()) CHECK(v == 0.0);

  // spatial size mismatch
  CHECK_THROWS_AS(apply_gate(f, Tensor::ones({1, 1, 2, 2}), gate), DimensionError);
}

TEST_CASE("gated features never grow in magnitude") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    AttentionGate gate(8, 4, true, true, trial, "g");
    Tensor f = Tensor::uniform({1, 8, 4, 4}, rng, -3, 3);
    Tensor ws = Tensor::uniform({1, 1, 4, 4}, rng, 0.0, 1.0);
    Tensor out = apply_gate(f, ws, gate);
    for (std::size_t i = 0; i < f.numel(); ++i)
      CHECK(std::abs(out.data()[i]) <= std::abs(f.data()[i]));
  }
}

TEST_CASE("channel gating strictly precedes spatial gating") {
  // probe where the two orders differ: channel weights computed from the
  // *ungated* features vs from spatially-gated features
  AttentionGate gate(2, 1, true, true, 17, "g");
  Rng rng(17);
  Tensor f = Tensor::uniform({1, 2, 2, 2}, rng, 0.5, 1.5);
  Tensor ws = Tensor::from({1, 1, 2, 2}, {0.1, 0.9, 0.4, 0.7});

  Tensor expected;  // channel-first composition computed by hand
  {
    Tensor wc = channel_attention(f, gate);  // from ungated f
    Tensor fcn = mul(wc, f);
    expected = mul(ws, fcn);
  }
  Tensor got = apply_gate(f, ws, gate);
  CHECK(testutil::bitwise_equal(got, expected));

  // and the spatial-first composition genuinely differs on this probe
  Tensor other;
  {
    Tensor fsn = mul(ws, f);
    Tensor wc = channel_attention(fsn, gate);
    other = mul(wc, fsn);
  }
  CHECK(testutil::max_abs_diff(got, other) > 1e-6);
}

TEST_CASE("disabled levels pass features through") {
  Rng rng(19);
  Tensor f = Tensor::uniform({1, 4, 2, 2}, rng, -1, 1);
  AttentionGate channel_only(4, 2, true, false, 21, "g");
  Tensor out = apply_gate(f, Tensor(), channel_only);
  Tensor wc = channel_attention(f, channel_only);
  CHECK(testutil::bitwise_equal(out, mul(wc, f)));

  AttentionGate spatial_only(4, 2, false, true, 21, "g");
  CHECK_THROWS_AS(apply_gate(f, Tensor(), spatial_only), ContractError);
}
