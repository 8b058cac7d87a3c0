#pragma once

#include <vector>

#include "crackseg/attention.hpp"
#include "crackseg/peft.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct DecoderConfig {
  int token_dim = 256;  // must equal the encoder neck dim
  int num_class = 2;    // background, crack
  int two_way_depth = 2;
  int num_heads = 8;
  int upsample_mid = 64;   // transposed-conv channel path token_dim -> mid -> out
  int upsample_out = 32;
  int token_mlp_hidden = 1024;

  void validate() const;
};

/// Simplified prompt state: no sparse prompts, only the learnable dense
/// default added to every position plus the decoder positional table.
struct PromptWeights {
  TensorPtr dense_default;  // (token_dim)
  TensorPtr pos_table;      // (token_dim, h, w)
};

struct TwoWayBlockWeights {
  AttentionWeights self_attn;
  TensorPtr ln1_gain, ln1_bias;
  AttentionWeights cross_token_to_image;
  TensorPtr ln2_gain, ln2_bias;
  MlpWeights mlp;
  TensorPtr ln3_gain, ln3_bias;
  AttentionWeights cross_image_to_token;
  TensorPtr ln4_gain, ln4_bias;
};

struct DecoderWeights {
  std::vector<TwoWayBlockWeights> blocks;
  AttentionWeights final_token_to_image;
  TensorPtr ln_final_gain, ln_final_bias;
  TensorPtr out_mlp_w1, out_mlp_b1;  // (256,256)
  TensorPtr out_mlp_w2, out_mlp_b2;  // (256,256)
  TensorPtr out_mlp_w3, out_mlp_b3;  // (256,32)
  TensorPtr up_conv1_w, up_conv1_b;  // (256,mid,2,2)
  TensorPtr up_ln_gain, up_ln_bias;  // (mid)
  TensorPtr up_conv2_w, up_conv2_b;  // (mid,out,2,2)
};

/// embedding + broadcast(dense_default) over every spatial position.
TensorPtr apply_default_prompt(Tape& tape, const TensorPtr& embedding, const PromptWeights& prompt);

/// One two-way round: token self-attention, token->image cross-attention,
/// token MLP, image->token cross-attention, each followed by residual + LN.
/// The positional table is added to the image side of each cross-attention.
struct TwoWayState {
  TensorPtr tokens;     // (T, token_dim)
  TensorPtr image;      // (h*w, token_dim)
};
TwoWayState two_way_block(Tape& tape, const TwoWayState& state, const TensorPtr& image_pos,
                          const TwoWayBlockWeights& w, int num_heads);

/// Two stride-2 transposed convolutions, (token_dim,h,w) -> (out,4h,4w).
TensorPtr upsample_embedding(Tape& tape, const TensorPtr& image_emb, const DecoderWeights& w);

/// Bilinear upsample to full resolution first, then the per-class linear
/// classifier as a pointwise product over the channel features.
TensorPtr predict_masks(Tape& tape, const TensorPtr& class_rows, const TensorPtr& upsampled,
                        int full_h, int full_w);

TensorPtr decoder_forward(Tape& tape, const TensorPtr& image_emb, const PromptWeights& prompt,
                          const TensorPtr& mask_tokens, const DecoderWeights& w,
                          const DecoderConfig& cfg, int full_h, int full_w);

}  // namespace crackseg
