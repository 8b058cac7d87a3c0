#include "crackseg/decoder.hpp"

#include "crackseg/encoder.hpp"
#include "crackseg/ops.hpp"

namespace crackseg {

void DecoderConfig::validate() const {
  if (num_class < 2) throw ConfigError("decoder num_class must be >= 2");
  if (token_dim <= 0 || two_way_depth <= 0 || num_heads <= 0 || upsample_mid <= 0 ||
      upsample_out <= 0 || token_mlp_hidden <= 0)
    throw ConfigError("decoder config fields must be positive");
  if (token_dim % num_heads != 0)
    throw ConfigError("decoder token_dim not divisible by num_heads");
}

TensorPtr apply_default_prompt(Tape& tape, const TensorPtr& embedding,
                               const PromptWeights& prompt) {
  return ops::add_channel_bias(tape, embedding, prompt.dense_default);
}

TwoWayState two_way_block(Tape& tape, const TwoWayState& state, const TensorPtr& image_pos,
                          const TwoWayBlockWeights& w, int num_heads) {
  auto tokens = state.tokens;
  auto image = state.image;

  auto self_out = multihead_attention(tape, tokens, tokens, tokens, w.self_attn, num_heads);
  tokens = ops::layer_norm(tape, ops::add(tape, tokens, self_out), w.ln1_gain, w.ln1_bias);

  auto keys = ops::add(tape, image, image_pos);
  auto t2i = multihead_attention(tape, tokens, keys, image, w.cross_token_to_image, num_heads);
  tokens = ops::layer_norm(tape, ops::add(tape, tokens, t2i), w.ln2_gain, w.ln2_bias);

  auto mlp_out = mlp_forward(tape, tokens, w.mlp);
  tokens = ops::layer_norm(tape, ops::add(tape, tokens, mlp_out), w.ln3_gain, w.ln3_bias);

  auto queries = ops::add(tape, image, image_pos);
  auto i2t = multihead_attention(tape, queries, tokens, tokens, w.cross_image_to_token, num_heads);
  image = ops::layer_norm(tape, ops::add(tape, image, i2t), w.ln4_gain, w.ln4_bias);

  return {tokens, image};
}

TensorPtr upsample_embedding(Tape& tape, const TensorPtr& image_emb, const DecoderWeights& w) {
  auto c1 = ops::transposed_conv2d(tape, image_emb, w.up_conv1_w, w.up_conv1_b, 2);
  auto n1 = ops::layer_norm_chw(tape, c1, w.up_ln_gain, w.up_ln_bias);
  auto a1 = ops::gelu(tape, n1);
  auto c2 = ops::transposed_conv2d(tape, a1, w.up_conv2_w, w.up_conv2_b, 2);
  return ops::gelu(tape, c2);
}

TensorPtr predict_masks(Tape& tape, const TensorPtr& class_rows, const TensorPtr& upsampled,
                        int full_h, int full_w) {
  auto full = ops::resize(tape, upsampled, full_h, full_w, ops::ResizeMode::Bilinear);
  return ops::matmul(tape, class_rows, full);  // (num_class, H, W)
}

TensorPtr decoder_forward(Tape& tape, const TensorPtr& image_emb, const PromptWeights& prompt,
                          const TensorPtr& mask_tokens, const DecoderWeights& w,
                          const DecoderConfig& cfg, int full_h, int full_w) {
  cfg.validate();
  if (image_emb->shape.size() != 3 || image_emb->shape[0] != cfg.token_dim)
    throw ShapeError("decoder_forward: embedding " + shape_str(image_emb->shape) +
                     " does not match token_dim " + std::to_string(cfg.token_dim));
  const int h = image_emb->shape[1], width = image_emb->shape[2];

  auto prompted = apply_default_prompt(tape, image_emb, prompt);
  auto rows_idx = chw_to_rows_indices(cfg.token_dim, h, width);
  TwoWayState state{mask_tokens,
                    ops::gather(tape, prompted, rows_idx, {h * width, cfg.token_dim})};
  auto image_pos = ops::gather(tape, prompt.pos_table, rows_idx, {h * width, cfg.token_dim});

  for (const auto& block : w.blocks) state = two_way_block(tape, state, image_pos, block, cfg.num_heads);

  auto keys = ops::add(tape, state.image, image_pos);
  auto final_attn = multihead_attention(tape, state.tokens, keys, state.image,
                                        w.final_token_to_image, cfg.num_heads);
  auto tokens = ops::layer_norm(tape, ops::add(tape, state.tokens, final_attn), w.ln_final_gain,
                                w.ln_final_bias);

  auto hyper = ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, tokens, w.out_mlp_w1), w.out_mlp_b1));
  hyper = ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, hyper, w.out_mlp_w2), w.out_mlp_b2));
  hyper = ops::add_bias(tape, ops::matmul(tape, hyper, w.out_mlp_w3), w.out_mlp_b3);

  auto emb_chw = ops::gather(tape, state.image, rows_to_chw_indices(cfg.token_dim, h, width),
                             {cfg.token_dim, h, width});
  auto upsampled = upsample_embedding(tape, emb_chw, w);
  return predict_masks(tape, hyper, upsampled, full_h, full_w);
}

}  // namespace crackseg
