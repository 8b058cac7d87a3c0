#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg::ops {

enum class ResizeMode { Bilinear, Bicubic };

// Elementwise / broadcast arithmetic.
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& b);          // over last dim
TensorPtr add_channel_bias(Tape& tape, const TensorPtr& x, const TensorPtr& v);  // over first dim
TensorPtr scale(Tape& tape, const TensorPtr& x, float factor);
TensorPtr sum(Tape& tape, const TensorPtr& x);

// Linear algebra. matmul treats `a` as (rows, K) over its last dimension and
// `b` as (K, cols) over its first; the output shape is a's prefix followed by
// b's suffix.
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(Tape& tape, const TensorPtr& x);  // 2-D only

// Nonlinearities and normalization.
TensorPtr softmax(Tape& tape, const TensorPtr& x, int axis);
TensorPtr gelu(Tape& tape, const TensorPtr& x);
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     float eps = 1e-6f);
// Layer norm across the channel dimension of a (C,H,W) tensor.
TensorPtr layer_norm_chw(Tape& tape, const TensorPtr& x, const TensorPtr& gain,
                         const TensorPtr& bias, float eps = 1e-6f);

// Convolutions on (C,H,W) images. conv2d kernel layout (OC,IC,kh,kw);
// transposed_conv2d kernel layout (IC,OC,kh,kw). bias may be null.
TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias,
                 int stride, int padding);
TensorPtr transposed_conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& kernel,
                            const TensorPtr& bias, int stride);

// Half-pixel-center resize of a (C,H,W) tensor. Exact passthrough when the
// target equals the source size.
TensorPtr resize(Tape& tape, const TensorPtr& x, int target_h, int target_w, ResizeMode mode);

// Data movement. gather: out[i] = idx[i] >= 0 ? x[idx[i]] : 0.
TensorPtr gather(Tape& tape, const TensorPtr& x, std::vector<int64_t> idx, Shape out_shape);
TensorPtr slice_flat(Tape& tape, const TensorPtr& x, int64_t offset, Shape out_shape);
TensorPtr slice_cols(Tape& tape, const TensorPtr& x, int col_begin, int col_end);
TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts);

// Segmentation losses over per-pixel crack probabilities. `target` holds 0/1
// values and is treated as a constant.
TensorPtr cross_entropy(Tape& tape, const TensorPtr& prob, const TensorPtr& target);
TensorPtr dice_loss(Tape& tape, const TensorPtr& prob, const TensorPtr& target);

}  // namespace crackseg::ops
