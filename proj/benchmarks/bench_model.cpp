#include <benchmark/benchmark.h>

#include "crackseg/model.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/synth.hpp"
#include "crackseg/train.hpp"

using namespace crackseg;

namespace {

Model make_toy(DeltaSpec delta) {
  ModelConfig mc;
  mc.encoder = EncoderConfig::vit_toy();
  mc.delta = std::move(delta);
  mc.init_seed = 1;
  return build_model(mc);
}

void BM_toy_forward(benchmark::State& state) {
  Model model = make_toy(DeltaSpec{});
  SampleRecord sample = synth_sample(1, 0, 64);
  auto image = sample.image_tensor();
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(model_forward(tape, model, image));
  }
}
BENCHMARK(BM_toy_forward);

void BM_toy_forward_lora(benchmark::State& state) {
  DeltaSpec delta;
  delta.lora = LoRAConfig{};
  Model model = make_toy(std::move(delta));
  SampleRecord sample = synth_sample(1, 0, 64);
  auto image = sample.image_tensor();
  for (auto _ : state) {
    Tape tape = Tape::inference();
    benchmark::DoNotOptimize(model_forward(tape, model, image));
  }
}
BENCHMARK(BM_toy_forward_lora);

void BM_toy_training_step(benchmark::State& state) {
  DeltaSpec delta;
  delta.lora = LoRAConfig{};
  Model model = make_toy(std::move(delta));
  SampleRecord sample = synth_sample(1, 0, 64);
  auto image = sample.image_tensor();
  auto target = sample.mask_tensor();
  TrainConfig cfg;
  AdamW opt(cfg);
  for (auto _ : state) {
    for (const auto& e : model.params->entries()) e.value->clear_grad();
    Tape tape;
    auto prob = crack_probability(tape, model_forward(tape, model, image));
    auto loss = combined_loss(tape, prob, target, 0.2f);
    tape.backward(loss);
    opt.step(*model.params, 1e-4);
  }
}
BENCHMARK(BM_toy_training_step);

}  // namespace

BENCHMARK_MAIN();
