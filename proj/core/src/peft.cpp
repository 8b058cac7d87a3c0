#include "crackseg/peft.hpp"

#include <cmath>

#include "crackseg/ops.hpp"

namespace crackseg {

void AdapterConfig::validate() const {
  if (middle_dim < 1) throw ConfigError("adapter middle_dim must be >= 1");
  if (!sequential && !parallel) throw ConfigError("adapter needs at least one placement");
}

void LoRAConfig::validate() const {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (target_count() == 0) throw ConfigError("lora needs at least one target matrix");
}

void DeltaSpec::validate() const {
  if (adapter) adapter->validate();
  if (lora) lora->validate();
}

TensorPtr adapter_core(Tape& tape, const TensorPtr& x, const AdapterWeights& w) {
  auto h = ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, x, w.w_down), w.b_down));
  return ops::add_bias(tape, ops::matmul(tape, h, w.w_up), w.b_up);
}

TensorPtr sequential_adapter(Tape& tape, const TensorPtr& x, const AdapterWeights& w) {
  return ops::add(tape, adapter_core(tape, x, w), x);
}

TensorPtr mlp_forward(Tape& tape, const TensorPtr& x, const MlpWeights& w) {
  auto h = ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, x, w.w1), w.b1));
  return ops::add_bias(tape, ops::matmul(tape, h, w.w2), w.b2);
}

TensorPtr parallel_adapter(Tape& tape, const TensorPtr& x, const AdapterWeights& w, float scaling,
                           const MlpWeights& host_mlp, const TensorPtr& host_ln_gain,
                           const TensorPtr& host_ln_bias) {
  auto normed = ops::layer_norm(tape, x, host_ln_gain, host_ln_bias);
  auto mlp_out = mlp_forward(tape, normed, host_mlp);
  auto delta = ops::scale(tape, adapter_core(tape, normed, w), scaling);
  return ops::add(tape, ops::add(tape, delta, mlp_out), x);
}

TensorPtr lora_linear(Tape& tape, const TensorPtr& x, const TensorPtr& w0, const TensorPtr& b0,
                      const LoraPair& lora) {
  if (w0->shape.size() != 2 || lora.a->shape.size() != 2 || lora.b->shape.size() != 2)
    throw ConfigError("lora_linear: weights must be 2-D");
  if (lora.a->shape[0] != w0->shape[0] || lora.b->shape[1] != w0->shape[1] ||
      lora.a->shape[1] != lora.b->shape[0])
    throw ConfigError("lora_linear: rank/shape mismatch, W0 " + shape_str(w0->shape) + " A " +
                      shape_str(lora.a->shape) + " B " + shape_str(lora.b->shape));
  auto base = ops::add_bias(tape, ops::matmul(tape, x, w0), b0);
  auto bypass = ops::matmul(tape, ops::matmul(tape, x, lora.a), lora.b);
  return ops::add(tape, base, bypass);
}

std::vector<float> lora_delta(const Tensor& a, const Tensor& b) {
  const int d = a.shape[0], r = a.shape[1], k = b.shape[1];
  std::vector<float> out(static_cast<std::size_t>(d) * k, 0.0f);
  for (int i = 0; i < d; ++i)
    for (int rr = 0; rr < r; ++rr) {
      const float av = a.data[static_cast<std::size_t>(i) * r + rr];
      for (int j = 0; j < k; ++j)
        out[static_cast<std::size_t>(i) * k + j] += av * b.data[static_cast<std::size_t>(rr) * k + j];
    }
  return out;
}

}  // namespace crackseg
