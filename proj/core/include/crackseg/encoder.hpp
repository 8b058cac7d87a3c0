#pragma once

#include <optional>
#include <vector>

#include "crackseg/attention.hpp"
#include "crackseg/peft.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Image encoder hyperparameters.
struct EncoderConfig {
  int embed_dim = 768;
  int depth = 12;
  int num_heads = 12;
  int window_size = 14;
  int patch_size = 16;
  int neck_dim = 256;
  int image_size = 448;

  void validate() const;
  int grid_size() const { return image_size / patch_size; }

  static EncoderConfig vit_b() { return {768, 12, 12, 14, 16, 256, 448}; }
  static EncoderConfig vit_l() { return {1024, 24, 16, 14, 16, 256, 448}; }
  static EncoderConfig vit_h() { return {1280, 32, 16, 14, 16, 256, 448}; }
  /// Desk-scale preset for tests and gradient checks.
  static EncoderConfig vit_toy() { return {64, 2, 4, 2, 16, 256, 64}; }
};

struct ViTBlockWeights {
  TensorPtr ln1_gain, ln1_bias;
  TensorPtr ln2_gain, ln2_bias;
  AttentionWeights attn;  // attn.pos is the (heads, w^2, w^2) bias table
  MlpWeights mlp;
  std::optional<AdapterWeights> seq_adapter;  // after attention, inside residual branch
  std::optional<AdapterWeights> par_adapter;  // parallel at the MLP
};

struct EncoderWeights {
  TensorPtr patch_w, patch_b;  // (d,3,p,p), (d)
  TensorPtr abs_pos;           // (h,w,d)
  std::vector<ViTBlockWeights> blocks;
  TensorPtr neck_w1;  // (neck,d,1,1)
  TensorPtr neck_ln1_gain, neck_ln1_bias;
  TensorPtr neck_w2;  // (neck,neck,3,3)
  TensorPtr neck_ln2_gain, neck_ln2_bias;
};

/// Bookkeeping for padded window partitions.
struct PadInfo {
  int orig_h = 0, orig_w = 0;
  int padded_h = 0, padded_w = 0;
  int window = 0;
};

// (3,H,W) image in [0,1] -> (H/p, W/p, d) token grid.
TensorPtr patch_embed(Tape& tape, const TensorPtr& image, const TensorPtr& patch_w,
                      const TensorPtr& patch_b, const EncoderConfig& cfg);

TensorPtr add_absolute_positions(Tape& tape, const TensorPtr& grid, const TensorPtr& pos_table);

// (H,W,C) -> (N,w,w,C); pads bottom/right with zeros when H or W is not a
// multiple of w.
std::pair<TensorPtr, PadInfo> window_partition(Tape& tape, const TensorPtr& x, int window);

// Exact inverse of window_partition including pad removal.
TensorPtr window_unpartition(Tape& tape, const TensorPtr& windows, const PadInfo& pad, int h,
                             int w);

// Per-window multi-head self attention with the learnable pre-softmax bias.
TensorPtr window_attention(Tape& tape, const TensorPtr& windows, const AttentionWeights& w,
                           int num_heads);

TensorPtr vit_block(Tape& tape, const TensorPtr& x, const ViTBlockWeights& w,
                    const EncoderConfig& cfg, float adapter_scaling);

// 1x1 conv -> LN -> 3x3 conv -> LN, (h,w,d) -> (neck,h,w).
TensorPtr neck(Tape& tape, const TensorPtr& grid, const EncoderWeights& w);

TensorPtr encoder_forward(Tape& tape, const TensorPtr& image, const EncoderWeights& w,
                          const EncoderConfig& cfg, float adapter_scaling);

// Index helpers shared with the decoder: (C,H,W) <-> rows of (H*W, C).
std::vector<int64_t> chw_to_rows_indices(int c, int h, int w);
std::vector<int64_t> rows_to_chw_indices(int c, int h, int w);

}  // namespace crackseg
