#pragma once

#include <optional>

#include "crackseg/peft.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Multi-head attention projections. The projection matrices cover all heads
/// at once; heads are split along the channel dimension. Optional LoRA
/// bypasses wrap individual projections.
struct AttentionWeights {
  TensorPtr wq, bq;
  TensorPtr wk, bk;
  TensorPtr wv, bv;
  TensorPtr wo, bo;
  TensorPtr pos;  // optional (heads, Tq, Tk) additive pre-softmax bias
  std::optional<LoraPair> lora_q, lora_k, lora_v, lora_o;
};

/// softmax(Q K^T / sqrt(d_k) [+ pos]) V per head, heads concatenated and
/// passed through the output projection.
TensorPtr multihead_attention(Tape& tape, const TensorPtr& q_in, const TensorPtr& k_in,
                              const TensorPtr& v_in, const AttentionWeights& w, int num_heads);

}  // namespace crackseg
