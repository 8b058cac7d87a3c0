#include "crackseg/model.hpp"

#include "crackseg/ops.hpp"

namespace crackseg {

namespace {

AttentionWeights make_attention(ParamRegistry& reg, const std::string& prefix, int dim,
                                ParamGroup group) {
  AttentionWeights w;
  w.wq = reg.add(prefix + ".q.w", {dim, dim}, group, Init::TruncNormal);
  w.bq = reg.add(prefix + ".q.b", {dim}, group, Init::Zeros);
  w.wk = reg.add(prefix + ".k.w", {dim, dim}, group, Init::TruncNormal);
  w.bk = reg.add(prefix + ".k.b", {dim}, group, Init::Zeros);
  w.wv = reg.add(prefix + ".v.w", {dim, dim}, group, Init::TruncNormal);
  w.bv = reg.add(prefix + ".v.b", {dim}, group, Init::Zeros);
  w.wo = reg.add(prefix + ".out.w", {dim, dim}, group, Init::TruncNormal);
  w.bo = reg.add(prefix + ".out.b", {dim}, group, Init::Zeros);
  return w;
}

MlpWeights make_mlp(ParamRegistry& reg, const std::string& prefix, int dim, int hidden,
                    ParamGroup group) {
  MlpWeights m;
  m.w1 = reg.add(prefix + ".fc1.w", {dim, hidden}, group, Init::TruncNormal);
  m.b1 = reg.add(prefix + ".fc1.b", {hidden}, group, Init::Zeros);
  m.w2 = reg.add(prefix + ".fc2.w", {hidden, dim}, group, Init::TruncNormal);
  m.b2 = reg.add(prefix + ".fc2.b", {dim}, group, Init::Zeros);
  return m;
}

void make_ln(ParamRegistry& reg, const std::string& prefix, int dim, ParamGroup group,
             TensorPtr& gain, TensorPtr& bias) {
  gain = reg.add(prefix + ".gain", {dim}, group, Init::Ones);
  bias = reg.add(prefix + ".bias", {dim}, group, Init::Zeros);
}

AdapterWeights make_adapter(ParamRegistry& reg, const std::string& prefix, int dim, int mid) {
  AdapterWeights a;
  // up-projection starts at zero so a fresh adapter is the identity
  a.w_down = reg.add(prefix + ".down.w", {dim, mid}, ParamGroup::Delta, Init::Normal);
  a.b_down = reg.add(prefix + ".down.b", {mid}, ParamGroup::Delta, Init::Zeros);
  a.w_up = reg.add(prefix + ".up.w", {mid, dim}, ParamGroup::Delta, Init::Zeros);
  a.b_up = reg.add(prefix + ".up.b", {dim}, ParamGroup::Delta, Init::Zeros);
  return a;
}

LoraPair make_lora(ParamRegistry& reg, const std::string& prefix, int dim, int rank) {
  LoraPair p;
  p.a = reg.add(prefix + ".lora.a", {dim, rank}, ParamGroup::Delta, Init::Normal);
  p.b = reg.add(prefix + ".lora.b", {rank, dim}, ParamGroup::Delta, Init::Zeros);
  return p;
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  delta.validate();
  if (decoder.token_dim != encoder.neck_dim)
    throw ConfigError("decoder token_dim must equal encoder neck_dim");
}

Model build_model(const ModelConfig& cfg, bool materialize) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.cfg.delta = DeltaSpec{};  // attached below so build == build-base + attach
  m.params = std::make_shared<ParamRegistry>(materialize, cfg.init_seed);
  ParamRegistry& reg = *m.params;

  const EncoderConfig& ec = cfg.encoder;
  const DecoderConfig& dc = cfg.decoder;
  const int d = ec.embed_dim;
  const int grid = ec.grid_size();
  const int t = ec.window_size * ec.window_size;

  m.encoder.patch_w = reg.add("encoder.patch.w", {d, 3, ec.patch_size, ec.patch_size},
                              ParamGroup::Backbone, Init::TruncNormal);
  m.encoder.patch_b = reg.add("encoder.patch.b", {d}, ParamGroup::Backbone, Init::Zeros);
  m.encoder.abs_pos =
      reg.add("encoder.abs_pos", {grid, grid, d}, ParamGroup::Backbone, Init::TruncNormal);
  for (int i = 0; i < ec.depth; ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    ViTBlockWeights b;
    make_ln(reg, p + ".ln1", d, ParamGroup::Backbone, b.ln1_gain, b.ln1_bias);
    b.attn = make_attention(reg, p + ".attn", d, ParamGroup::Backbone);
    b.attn.pos = reg.add(p + ".attn.pos", {ec.num_heads, t, t}, ParamGroup::Backbone, Init::Zeros);
    make_ln(reg, p + ".ln2", d, ParamGroup::Backbone, b.ln2_gain, b.ln2_bias);
    b.mlp = make_mlp(reg, p + ".mlp", d, 4 * d, ParamGroup::Backbone);
    m.encoder.blocks.push_back(std::move(b));
  }
  m.encoder.neck_w1 =
      reg.add("encoder.neck.conv1.w", {ec.neck_dim, d, 1, 1}, ParamGroup::Backbone, Init::TruncNormal);
  make_ln(reg, "encoder.neck.ln1", ec.neck_dim, ParamGroup::Backbone, m.encoder.neck_ln1_gain,
          m.encoder.neck_ln1_bias);
  m.encoder.neck_w2 = reg.add("encoder.neck.conv2.w", {ec.neck_dim, ec.neck_dim, 3, 3},
                              ParamGroup::Backbone, Init::TruncNormal);
  make_ln(reg, "encoder.neck.ln2", ec.neck_dim, ParamGroup::Backbone, m.encoder.neck_ln2_gain,
          m.encoder.neck_ln2_bias);

  m.prompt.dense_default =
      reg.add("prompt.dense_default", {dc.token_dim}, ParamGroup::Head, Init::TruncNormal);
  m.prompt.pos_table =
      reg.add("prompt.pos_table", {dc.token_dim, grid, grid}, ParamGroup::Head, Init::TruncNormal);
  m.mask_tokens =
      reg.add("decoder.mask_tokens", {dc.num_class, dc.token_dim}, ParamGroup::Head, Init::TruncNormal);

  for (int i = 0; i < dc.two_way_depth; ++i) {
    const std::string p = "decoder.twoway" + std::to_string(i);
    TwoWayBlockWeights b;
    b.self_attn = make_attention(reg, p + ".self", dc.token_dim, ParamGroup::Head);
    make_ln(reg, p + ".ln1", dc.token_dim, ParamGroup::Head, b.ln1_gain, b.ln1_bias);
    b.cross_token_to_image = make_attention(reg, p + ".t2i", dc.token_dim, ParamGroup::Head);
    make_ln(reg, p + ".ln2", dc.token_dim, ParamGroup::Head, b.ln2_gain, b.ln2_bias);
    b.mlp = make_mlp(reg, p + ".mlp", dc.token_dim, dc.token_mlp_hidden, ParamGroup::Head);
    make_ln(reg, p + ".ln3", dc.token_dim, ParamGroup::Head, b.ln3_gain, b.ln3_bias);
    b.cross_image_to_token = make_attention(reg, p + ".i2t", dc.token_dim, ParamGroup::Head);
    make_ln(reg, p + ".ln4", dc.token_dim, ParamGroup::Head, b.ln4_gain, b.ln4_bias);
    m.decoder.blocks.push_back(std::move(b));
  }
  m.decoder.final_token_to_image =
      make_attention(reg, "decoder.final_t2i", dc.token_dim, ParamGroup::Head);
  make_ln(reg, "decoder.ln_final", dc.token_dim, ParamGroup::Head, m.decoder.ln_final_gain,
          m.decoder.ln_final_bias);
  m.decoder.out_mlp_w1 =
      reg.add("decoder.out_mlp.fc1.w", {dc.token_dim, dc.token_dim}, ParamGroup::Head, Init::TruncNormal);
  m.decoder.out_mlp_b1 = reg.add("decoder.out_mlp.fc1.b", {dc.token_dim}, ParamGroup::Head, Init::Zeros);
  m.decoder.out_mlp_w2 =
      reg.add("decoder.out_mlp.fc2.w", {dc.token_dim, dc.token_dim}, ParamGroup::Head, Init::TruncNormal);
  m.decoder.out_mlp_b2 = reg.add("decoder.out_mlp.fc2.b", {dc.token_dim}, ParamGroup::Head, Init::Zeros);
  m.decoder.out_mlp_w3 =
      reg.add("decoder.out_mlp.fc3.w", {dc.token_dim, dc.upsample_out}, ParamGroup::Head, Init::TruncNormal);
  m.decoder.out_mlp_b3 =
      reg.add("decoder.out_mlp.fc3.b", {dc.upsample_out}, ParamGroup::Head, Init::Zeros);
  m.decoder.up_conv1_w = reg.add("decoder.up.conv1.w", {dc.token_dim, dc.upsample_mid, 2, 2},
                                 ParamGroup::Head, Init::TruncNormal);
  m.decoder.up_conv1_b =
      reg.add("decoder.up.conv1.b", {dc.upsample_mid}, ParamGroup::Head, Init::Zeros);
  make_ln(reg, "decoder.up.ln", dc.upsample_mid, ParamGroup::Head, m.decoder.up_ln_gain,
          m.decoder.up_ln_bias);
  m.decoder.up_conv2_w = reg.add("decoder.up.conv2.w", {dc.upsample_mid, dc.upsample_out, 2, 2},
                                 ParamGroup::Head, Init::TruncNormal);
  m.decoder.up_conv2_b =
      reg.add("decoder.up.conv2.b", {dc.upsample_out}, ParamGroup::Head, Init::Zeros);

  if (!cfg.delta.empty()) attach_deltas(m, cfg.delta.adapter, cfg.delta.lora);
  return m;
}

FreezeMask attach_deltas(Model& model, const std::optional<AdapterConfig>& adapter,
                         const std::optional<LoRAConfig>& lora) {
  if (model.cfg.delta.adapter || model.cfg.delta.lora)
    throw ContractError("attach_deltas: model already carries deltas");
  if (adapter) adapter->validate();
  if (lora) lora->validate();
  ParamRegistry& reg = *model.params;
  const int d = model.cfg.encoder.embed_dim;
  for (std::size_t i = 0; i < model.encoder.blocks.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    ViTBlockWeights& b = model.encoder.blocks[i];
    if (adapter) {
      if (adapter->sequential)
        b.seq_adapter = make_adapter(reg, p + ".adapter_attn", d, adapter->middle_dim);
      if (adapter->parallel)
        b.par_adapter = make_adapter(reg, p + ".adapter_mlp", d, adapter->middle_dim);
    }
    if (lora) {
      if (lora->on_query) b.attn.lora_q = make_lora(reg, p + ".attn.q", d, lora->rank);
      if (lora->on_key) b.attn.lora_k = make_lora(reg, p + ".attn.k", d, lora->rank);
      if (lora->on_value) b.attn.lora_v = make_lora(reg, p + ".attn.v", d, lora->rank);
      if (lora->on_output) b.attn.lora_o = make_lora(reg, p + ".attn.out", d, lora->rank);
    }
  }
  model.cfg.delta.adapter = adapter;
  model.cfg.delta.lora = lora;
  return freeze_mask(model);
}

FreezeMask freeze_mask(const Model& model) {
  FreezeMask mask;
  mask.tunable = model.params->tunable_names();
  return mask;
}

void merge_lora(Model& model) {
  if (model.lora_merged) throw ContractError("merge_lora: model already merged");
  if (!model.cfg.delta.lora) throw ContractError("merge_lora: model carries no LoRA delta");
  for (auto& block : model.encoder.blocks) {
    auto fold = [](TensorPtr& w0, std::optional<LoraPair>& pair) {
      if (!pair) return;
      const auto delta = lora_delta(*(*pair).a, *(*pair).b);
      for (std::size_t i = 0; i < delta.size(); ++i) w0->data[i] += delta[i];
      std::fill((*pair).b->data.begin(), (*pair).b->data.end(), 0.0f);
    };
    fold(block.attn.wq, block.attn.lora_q);
    fold(block.attn.wk, block.attn.lora_k);
    fold(block.attn.wv, block.attn.lora_v);
    fold(block.attn.wo, block.attn.lora_o);
  }
  model.lora_merged = true;
}

int64_t count_parameters(const Model& model, CountFilter filter) {
  return model.params->count(filter);
}

TensorPtr model_forward(Tape& tape, const Model& model, const TensorPtr& image) {
  auto emb = encoder_forward(tape, image, model.encoder, model.cfg.encoder,
                             model.adapter_scaling());
  return decoder_forward(tape, emb, model.prompt, model.mask_tokens, model.decoder,
                         model.cfg.decoder, image->shape[1], image->shape[2]);
}

TensorPtr crack_probability(Tape& tape, const TensorPtr& logits) {
  auto prob = ops::softmax(tape, logits, 0);
  const int h = logits->shape[1], w = logits->shape[2];
  return ops::slice_flat(tape, prob, static_cast<int64_t>(h) * w, {h, w});
}

std::vector<uint8_t> binarize_threshold(const Tensor& prob, float threshold) {
  std::vector<uint8_t> mask(prob.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = prob.data[i] >= threshold ? 1 : 0;
  return mask;
}

std::vector<uint8_t> binarize_argmax(const Tensor& class_maps) {
  if (class_maps.shape.size() != 3)
    throw ShapeError("binarize_argmax: expected (num_class,H,W), got " +
                     shape_str(class_maps.shape));
  const int nc = class_maps.shape[0];
  const int64_t plane = class_maps.numel() / nc;
  std::vector<uint8_t> mask(plane);
  for (int64_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int c = 1; c < nc; ++c)
      if (class_maps.data[c * plane + p] >= class_maps.data[best * plane + p]) best = c;
    mask[p] = best == 1 ? 1 : 0;
  }
  return mask;
}

}  // namespace crackseg
