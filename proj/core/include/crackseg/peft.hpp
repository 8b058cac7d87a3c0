#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// Bottleneck adapter configuration. Both placements (sequential after the
/// attention output, parallel at the MLP) are active by default.
struct AdapterConfig {
  int middle_dim = 32;
  float scaling = 0.2f;
  bool sequential = true;
  bool parallel = true;

  void validate() const;
};

/// Low-rank bypass settings. The bypass is added unscaled: no alpha/rank
/// factor is applied, so the update is exactly x A B.
struct LoRAConfig {
  int rank = 4;
  bool on_query = true;
  bool on_key = false;
  bool on_value = true;
  bool on_output = false;

  void validate() const;
  int target_count() const {
    return (on_query ? 1 : 0) + (on_key ? 1 : 0) + (on_value ? 1 : 0) + (on_output ? 1 : 0);
  }
};

/// The full PEFT configuration attached to a model. An empty spec reproduces
/// the fine-tune-only-head baseline.
struct DeltaSpec {
  std::optional<AdapterConfig> adapter;
  std::optional<LoRAConfig> lora;

  bool empty() const { return !adapter && !lora; }
  void validate() const;
};

struct AdapterWeights {
  TensorPtr w_down, b_down;  // (d,m), (m)
  TensorPtr w_up, b_up;      // (m,d), (d)
};

struct LoraPair {
  TensorPtr a;  // (d,r), gaussian init
  TensorPtr b;  // (r,k), zero init
};

/// Identifiers of the parameters that stay trainable; everything else is
/// frozen.
struct FreezeMask {
  std::vector<std::string> tunable;

  bool contains(const std::string& name) const {
    if (lookup_.empty() && !tunable.empty())
      lookup_.insert(tunable.begin(), tunable.end());
    return lookup_.count(name) > 0;
  }

 private:
  mutable std::unordered_set<std::string> lookup_;
};

/// Eq-style bottleneck: W_up * GELU(W_down x + b_down) + b_up, no residual.
TensorPtr adapter_core(Tape& tape, const TensorPtr& x, const AdapterWeights& w);

/// Sequential adapter with its internal residual connection.
TensorPtr sequential_adapter(Tape& tape, const TensorPtr& x, const AdapterWeights& w);

/// Parallel adapter at the MLP: s * adapter(LN(x)) + MLP(LN(x)) + x, where the
/// LN is the host block's (frozen) pre-MLP norm.
struct MlpWeights {
  TensorPtr w1, b1;  // (d, hidden)
  TensorPtr w2, b2;  // (hidden, d)
};
TensorPtr mlp_forward(Tape& tape, const TensorPtr& x, const MlpWeights& w);
TensorPtr parallel_adapter(Tape& tape, const TensorPtr& x, const AdapterWeights& w, float scaling,
                           const MlpWeights& host_mlp, const TensorPtr& host_ln_gain,
                           const TensorPtr& host_ln_bias);

/// Frozen linear plus low-rank bypass: y = x W0 + b0 + (x A) B.
TensorPtr lora_linear(Tape& tape, const TensorPtr& x, const TensorPtr& w0, const TensorPtr& b0,
                      const LoraPair& lora);

/// Dense delta A*B with the same shape as the wrapped weight.
std::vector<float> lora_delta(const Tensor& a, const Tensor& b);

}  // namespace crackseg
