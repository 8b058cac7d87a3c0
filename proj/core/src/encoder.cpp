#include "crackseg/encoder.hpp"

#include <cmath>

#include "crackseg/ops.hpp"

namespace crackseg {

void EncoderConfig::validate() const {
  if (embed_dim <= 0 || depth <= 0 || num_heads <= 0 || window_size <= 0 || patch_size <= 0 ||
      neck_dim <= 0 || image_size <= 0)
    throw ConfigError("encoder config fields must be positive");
  if (embed_dim % num_heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (image_size % patch_size != 0)
    throw ShapeError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                     std::to_string(patch_size));
}

// Shared multi-head attention used by the window blocks and the decoder.
TensorPtr multihead_attention(Tape& tape, const TensorPtr& q_in, const TensorPtr& k_in,
                              const TensorPtr& v_in, const AttentionWeights& w, int num_heads) {
  const int dim = w.wq->shape[0];
  if (q_in->cols() != dim)
    throw ConfigError("attention: token dim " + std::to_string(q_in->cols()) +
                      " does not match projection dim " + std::to_string(dim));
  if (dim % num_heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  const int dk = dim / num_heads;
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));
  const int tq = static_cast<int>(q_in->rows());
  const int tk = static_cast<int>(k_in->rows());

  auto project = [&](const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias,
                     const std::optional<LoraPair>& lora) {
    if (lora) return lora_linear(tape, x, weight, bias, *lora);
    return ops::add_bias(tape, ops::matmul(tape, x, weight), bias);
  };
  auto q = project(q_in, w.wq, w.bq, w.lora_q);
  auto k = project(k_in, w.wk, w.bk, w.lora_k);
  auto v = project(v_in, w.wv, w.bv, w.lora_v);

  std::vector<TensorPtr> heads;
  heads.reserve(num_heads);
  for (int h = 0; h < num_heads; ++h) {
    auto qh = ops::slice_cols(tape, q, h * dk, (h + 1) * dk);
    auto kh = ops::slice_cols(tape, k, h * dk, (h + 1) * dk);
    auto vh = ops::slice_cols(tape, v, h * dk, (h + 1) * dk);
    auto scores = ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)), inv_sqrt_dk);
    if (w.pos) {
      auto pos_h = ops::slice_flat(tape, w.pos, static_cast<int64_t>(h) * tq * tk, {tq, tk});
      scores = ops::add(tape, scores, pos_h);
    }
    auto attn = ops::softmax(tape, scores, 1);
    heads.push_back(ops::matmul(tape, attn, vh));
  }
  auto merged = ops::concat_cols(tape, heads);
  return project(merged, w.wo, w.bo, w.lora_o);
}

TensorPtr patch_embed(Tape& tape, const TensorPtr& image, const TensorPtr& patch_w,
                      const TensorPtr& patch_b, const EncoderConfig& cfg) {
  if (image->shape.size() != 3 || image->shape[0] != 3)
    throw ShapeError("patch_embed: expected (3,H,W) image, got " + shape_str(image->shape));
  const int h = image->shape[1], w = image->shape[2];
  if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0)
    throw ShapeError("patch_embed: image " + shape_str(image->shape) +
                     " not divisible by patch size " + std::to_string(cfg.patch_size));
  auto chw = ops::conv2d(tape, image, patch_w, patch_b, cfg.patch_size, 0);
  const int gh = chw->shape[1], gw = chw->shape[2];
  return ops::gather(tape, chw, chw_to_rows_indices(cfg.embed_dim, gh, gw),
                     {gh, gw, cfg.embed_dim});
}

TensorPtr add_absolute_positions(Tape& tape, const TensorPtr& grid, const TensorPtr& pos_table) {
  return ops::add(tape, grid, pos_table);
}

std::pair<TensorPtr, PadInfo> window_partition(Tape& tape, const TensorPtr& x, int window) {
  if (x->shape.size() != 3) throw ShapeError("window_partition: expected (H,W,C)");
  if (window < 1) throw ConfigError("window_partition: window must be >= 1");
  const int h = x->shape[0], w = x->shape[1], c = x->shape[2];
  const int ph = (h + window - 1) / window * window;
  const int pw = (w + window - 1) / window * window;
  const int nh = ph / window, nw = pw / window;
  const int n = nh * nw;
  std::vector<int64_t> idx(static_cast<std::size_t>(n) * window * window * c);
  std::size_t o = 0;
  for (int wy = 0; wy < nh; ++wy)
    for (int wx = 0; wx < nw; ++wx)
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const int y = wy * window + i;
          const int xx = wx * window + j;
          const bool inside = y < h && xx < w;
          for (int cc = 0; cc < c; ++cc)
            idx[o++] = inside ? (static_cast<int64_t>(y) * w + xx) * c + cc : -1;
        }
  PadInfo pad{h, w, ph, pw, window};
  return {ops::gather(tape, x, std::move(idx), {n, window, window, c}), pad};
}

TensorPtr window_unpartition(Tape& tape, const TensorPtr& windows, const PadInfo& pad, int h,
                             int w) {
  if (windows->shape.size() < 2) throw ContractError("window_unpartition: bad windows tensor");
  const int c = windows->cols();
  const int win = pad.window;
  if (h != pad.orig_h || w != pad.orig_w || win < 1 || pad.padded_h % win != 0 ||
      pad.padded_w % win != 0 ||
      windows->numel() != static_cast<int64_t>(pad.padded_h) * pad.padded_w * c)
    throw ContractError("window_unpartition: pad_info inconsistent with windows");
  const int nw = pad.padded_w / win;
  std::vector<int64_t> idx(static_cast<std::size_t>(h) * w * c);
  std::size_t o = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int n = (y / win) * nw + (x / win);
      const int i = y % win, j = x % win;
      const int64_t base = ((static_cast<int64_t>(n) * win + i) * win + j) * c;
      for (int cc = 0; cc < c; ++cc) idx[o++] = base + cc;
    }
  return ops::gather(tape, windows, std::move(idx), {h, w, c});
}

TensorPtr window_attention(Tape& tape, const TensorPtr& windows, const AttentionWeights& w,
                           int num_heads) {
  if (windows->shape.size() != 4)
    throw ShapeError("window_attention: expected (N,w,w,C), got " + shape_str(windows->shape));
  const int n = windows->shape[0];
  const int win = windows->shape[1];
  const int c = windows->shape[3];
  const int tokens = win * win;
  std::vector<TensorPtr> outs;
  outs.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto xw = ops::slice_flat(tape, windows, static_cast<int64_t>(i) * tokens * c, {tokens, c});
    outs.push_back(multihead_attention(tape, xw, xw, xw, w, num_heads));
  }
  auto flat = ops::concat_rows(tape, outs);  // (n*tokens, c)
  return ops::slice_flat(tape, flat, 0, {n, win, win, c});
}

TensorPtr vit_block(Tape& tape, const TensorPtr& x, const ViTBlockWeights& w,
                    const EncoderConfig& cfg, float adapter_scaling) {
  const int h = x->shape[0], width = x->shape[1];
  auto normed = ops::layer_norm(tape, x, w.ln1_gain, w.ln1_bias);
  auto [windows, pad] = window_partition(tape, normed, cfg.window_size);
  auto attended = window_attention(tape, windows, w.attn, cfg.num_heads);
  auto attn_out = window_unpartition(tape, attended, pad, h, width);
  if (w.seq_adapter) attn_out = sequential_adapter(tape, attn_out, *w.seq_adapter);
  auto x1 = ops::add(tape, x, attn_out);
  if (w.par_adapter)
    return parallel_adapter(tape, x1, *w.par_adapter, adapter_scaling, w.mlp, w.ln2_gain,
                            w.ln2_bias);
  auto normed2 = ops::layer_norm(tape, x1, w.ln2_gain, w.ln2_bias);
  return ops::add(tape, x1, mlp_forward(tape, normed2, w.mlp));
}

TensorPtr neck(Tape& tape, const TensorPtr& grid, const EncoderWeights& w) {
  const int h = grid->shape[0], width = grid->shape[1], d = grid->shape[2];
  auto chw = ops::gather(tape, grid, rows_to_chw_indices(d, h, width), {d, h, width});
  auto c1 = ops::conv2d(tape, chw, w.neck_w1, nullptr, 1, 0);
  auto l1 = ops::layer_norm_chw(tape, c1, w.neck_ln1_gain, w.neck_ln1_bias);
  auto c2 = ops::conv2d(tape, l1, w.neck_w2, nullptr, 1, 1);
  return ops::layer_norm_chw(tape, c2, w.neck_ln2_gain, w.neck_ln2_bias);
}

TensorPtr encoder_forward(Tape& tape, const TensorPtr& image, const EncoderWeights& w,
                          const EncoderConfig& cfg, float adapter_scaling) {
  cfg.validate();
  auto grid = patch_embed(tape, image, w.patch_w, w.patch_b, cfg);
  grid = add_absolute_positions(tape, grid, w.abs_pos);
  for (const auto& block : w.blocks) grid = vit_block(tape, grid, block, cfg, adapter_scaling);
  return neck(tape, grid, w);
}

std::vector<int64_t> chw_to_rows_indices(int c, int h, int w) {
  std::vector<int64_t> idx(static_cast<std::size_t>(c) * h * w);
  std::size_t o = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int cc = 0; cc < c; ++cc)
        idx[o++] = (static_cast<int64_t>(cc) * h + y) * w + x;
  return idx;
}

std::vector<int64_t> rows_to_chw_indices(int c, int h, int w) {
  std::vector<int64_t> idx(static_cast<std::size_t>(c) * h * w);
  std::size_t o = 0;
  for (int cc = 0; cc < c; ++cc)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        idx[o++] = (static_cast<int64_t>(y) * w + x) * c + cc;
  return idx;
}

}  // namespace crackseg
