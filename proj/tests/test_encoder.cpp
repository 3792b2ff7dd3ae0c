#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "transnorm/encoder.hpp"

using namespace tn;

TEST_CASE("encoder pyramid shapes at base width 16") {
  Encoder enc(1, 16, 7);
  Rng rng(1);
  Tensor img = Tensor::uniform({1, 1, 64, 64}, rng, 0, 1);
  FeaturePyramid pyr = enc.encode(img, true);
  REQUIRE(pyr.levels.size() == 3);
  CHECK(pyr.levels[0].shape() == Shape{1, 16, 32, 32});
  CHECK(pyr.levels[1].shape() == Shape{1, 32, 16, 16});
  CHECK(pyr.levels[2].shape() == Shape{1, 64, 8, 8});
  CHECK(pyr.bottleneck.shape() == Shape{1, 128, 4, 4});
}

TEST_CASE("encoder rejects indivisible sizes before any compute") {
  Encoder enc(1, 8, 7);
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 1, 60, 60}), true), DimensionError);
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 2, 64, 64}), true), DimensionError);
}

TEST_CASE("every encoder parameter receives gradient on a generic loss") {
  Encoder enc(1, 4, 11);
  Rng rng(2);
  Tensor img = Tensor::uniform({2, 1, 32, 32}, rng, 0, 1);

  struct Collect : StateVisitor {
    std::vector<std::pair<std::string, Tensor>> params;
    void tensor(const std::string& n, Tensor& t, bool trainable) override {
      if (trainable) params.emplace_back(n, t);
    }
    void raw(const std::string&, std::vector<double>&) override {}
  } collect;
  enc.visit(collect);
  REQUIRE(collect.params.size() == 8 * 4);  // 4 stages x 2 blocks x (conv w/b, bn g/b)

  Tensor wgt;
  {
    GradTape tape;
    FeaturePyramid pyr = enc.encode(img, true);
    Tensor cat = concat({reshape(pyr.bottleneck, {int(pyr.bottleneck.numel())}),
                         reshape(pyr.levels[0], {int(pyr.levels[0].numel())})},
                        0);
    wgt = Tensor::uniform({int(cat.numel())}, rng, 0.5, 1.5);
    tape.backward(sum(mul(cat, wgt)));
  }
  for (auto& [name, p] : collect.params) {
    INFO(name);
    REQUIRE(p.has_grad());
    double norm = 0;
    for (double g : p.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("encode is deterministic in inference mode") {
  Encoder enc(1, 4, 13);
  Rng rng(3);
  Tensor img = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
  // one training pass to populate running stats
  enc.encode(img, true);
  Tensor a = enc.encode(img, false).bottleneck;
  Tensor b = enc.encode(img, false).bottleneck;
  CHECK(testutil::bitwise_equal(a, b));
}

TEST_CASE("identical seeds give identical parameters") {
  Encoder a(1, 8, 42), b(1, 8, 42);
  Rng rng(4);
  Tensor img = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
  CHECK(testutil::bitwise_equal(a.encode(img, true).bottleneck,
                                b.encode(img, true).bottleneck));
}
