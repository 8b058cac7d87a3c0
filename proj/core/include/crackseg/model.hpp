#pragma once

#include <memory>
#include <optional>
#include <string>

#include "crackseg/decoder.hpp"
#include "crackseg/encoder.hpp"
#include "crackseg/params.hpp"
#include "crackseg/peft.hpp"

namespace crackseg {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  DeltaSpec delta;
  uint64_t init_seed = 1;

  void validate() const;
};

/// The assembled segmentation model: encoder, prompt state, mask tokens and
/// decoder, with every parameter registered by name. Backbone weights are
/// always frozen; prompt, decoder and attached deltas train.
struct Model {
  ModelConfig cfg;
  std::shared_ptr<ParamRegistry> params;
  EncoderWeights encoder;
  PromptWeights prompt;
  TensorPtr mask_tokens;
  DecoderWeights decoder;
  bool lora_merged = false;

  float adapter_scaling() const {
    return cfg.delta.adapter ? cfg.delta.adapter->scaling : 0.0f;
  }
};

/// Builds the base model, then attaches any deltas from cfg.delta. With
/// materialize = false only names/shapes are created (for counting).
Model build_model(const ModelConfig& cfg, bool materialize = true);

/// Inserts adapter and/or LoRA weights into every encoder block of an
/// un-adapted model and returns the set of trainable parameters (deltas plus
/// prompt encoder and decoder).
FreezeMask attach_deltas(Model& model, const std::optional<AdapterConfig>& adapter,
                         const std::optional<LoRAConfig>& lora);

FreezeMask freeze_mask(const Model& model);

/// Folds every LoRA bypass into its wrapped weight (W := W + A B, B := 0).
/// Rejected if the model has already been merged or carries no LoRA.
void merge_lora(Model& model);

int64_t count_parameters(const Model& model, CountFilter filter);

/// (3,H,W) image in [0,1] -> (num_class,H,W) logits.
TensorPtr model_forward(Tape& tape, const Model& model, const TensorPtr& image);

/// Per-pixel crack probability map (H,W): channel-1 softmax of the logits.
TensorPtr crack_probability(Tape& tape, const TensorPtr& logits);

/// Probability >= threshold is crack (ties are positive).
std::vector<uint8_t> binarize_threshold(const Tensor& prob, float threshold = 0.5f);
/// Channel argmax over (num_class,H,W); ties pick the higher class index, so
/// both modes agree for two-class softmax outputs.
std::vector<uint8_t> binarize_argmax(const Tensor& class_maps);

}  // namespace crackseg
