#include <benchmark/benchmark.h>

#include "crackseg/ops.hpp"
#include "crackseg/rng.hpp"

using namespace crackseg;

namespace {

TensorPtr random_tensor(Rng& rng, Shape shape) {
  auto t = make_tensor(std::move(shape));
  for (float& v : t->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  auto a = random_tensor(rng, {n, n});
  auto b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(ops::matmul(tape, a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(196)->Arg(256);

void BM_matmul_backward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  auto a = random_tensor(rng, {n, n});
  auto b = random_tensor(rng, {n, n});
  a->tunable = b->tunable = true;
  std::vector<float> seed(static_cast<std::size_t>(n) * n, 1.0f);
  for (auto _ : state) {
    a->clear_grad();
    b->clear_grad();
    Tape tape;
    auto out = ops::matmul(tape, a, b);
    tape.backward_seeded(out, seed);
  }
}
BENCHMARK(BM_matmul_backward)->Arg(64)->Arg(196);

void BM_softmax_rows(benchmark::State& state) {
  Rng rng(3);
  auto x = random_tensor(rng, {196, 196});
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(ops::softmax(tape, x, 1));
  }
}
BENCHMARK(BM_softmax_rows);

void BM_conv2d_neck3x3(benchmark::State& state) {
  Rng rng(4);
  auto x = random_tensor(rng, {256, 8, 8});
  auto k = random_tensor(rng, {256, 256, 3, 3});
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(ops::conv2d(tape, x, k, nullptr, 1, 1));
  }
}
BENCHMARK(BM_conv2d_neck3x3);

void BM_resize_bilinear(benchmark::State& state) {
  Rng rng(5);
  auto x = random_tensor(rng, {32, 16, 16});
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(ops::resize(tape, x, 64, 64, ops::ResizeMode::Bilinear));
  }
}
BENCHMARK(BM_resize_bilinear);

}  // namespace

BENCHMARK_MAIN();
