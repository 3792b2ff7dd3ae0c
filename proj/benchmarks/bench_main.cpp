#include <benchmark/benchmark.h>

#include "transnorm/model.hpp"
#include "transnorm/ops.hpp"

using namespace tn;

namespace {

void BM_MatMul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::uniform({n, n}, rng, -1, 1);
  Tensor b = Tensor::uniform({n, n}, rng, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_MatMul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor x = Tensor::uniform({1, c, 32, 32}, rng, -1, 1);
  Tensor w = Tensor::uniform({c, c, 3, 3}, rng, -1, 1);
  Tensor b = Tensor::zeros({c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1).data().data());
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32)->Arg(64);

void BM_TransformerBlock(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  TransformerLayer layer(64, 3, "bench.layer");
  Rng rng(3);
  Tensor z = Tensor::uniform({1, n, 64}, rng, -1, 1);
  for (auto _ : state) {
    auto [out, attn] = transformer_block(z, layer, 4);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_TransformerBlock)->Arg(16)->Arg(64)->Arg(256);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_size = static_cast<int>(state.range(0));
  cfg.base_width = 16;
  cfg.transformer = {4, 4, 64, 1};
  TransNorm model(cfg);
  Rng rng(4);
  Tensor img = Tensor::uniform({1, 1, cfg.input_size, cfg.input_size}, rng, 0, 1);
  model.forward(img, true);  // populate batch-norm statistics
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(img, false).logits.data().data());
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.base_width = 8;
  cfg.transformer = {2, 2, 32, 1};
  TransNorm model(cfg);
  Adam adam(model.named_parameters(), AdamConfig{});
  Rng rng(5);
  Tensor imgs = Tensor::uniform({4, 1, 32, 32}, rng, 0, 1);
  Tensor msks = Tensor::zeros({4, 32, 32});
  for (std::size_t i = 0; i < msks.numel(); ++i)
    msks.data()[i] = rng.next_double() < 0.3 ? 1.0 : 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, adam, imgs, msks));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
