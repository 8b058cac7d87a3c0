#include "crackseg/refeval.hpp"

#include <algorithm>
#include <cmath>

#include "crackseg/kernels.hpp"

namespace crackseg {

namespace {

using dvec = std::vector<double>;

// y(rows,out) = x(rows,in) * W(in,out) + b, with optional LoRA bypass
dvec linear(const dvec& x, int rows, const Tensor& w, const Tensor& b,
            const std::optional<LoraPair>& lora = std::nullopt) {
  const int in = w.shape[0], out = w.shape[1];
  dvec y(static_cast<std::size_t>(rows) * out);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(r) * out + j] = b.data[j];
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<std::size_t>(r) * in;
    double* yr = y.data() + static_cast<std::size_t>(r) * out;
    for (int k = 0; k < in; ++k) {
      const double xv = xr[k];
      const float* wr = w.data.data() + static_cast<std::size_t>(k) * out;
      for (int j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
  if (lora) {
    const int rank = lora->a->shape[1];
    dvec mid(static_cast<std::size_t>(rows) * rank, 0.0);
    for (int r = 0; r < rows; ++r)
      for (int k = 0; k < in; ++k) {
        const double xv = x[static_cast<std::size_t>(r) * in + k];
        for (int q = 0; q < rank; ++q)
          mid[static_cast<std::size_t>(r) * rank + q] +=
              xv * lora->a->data[static_cast<std::size_t>(k) * rank + q];
      }
    for (int r = 0; r < rows; ++r)
      for (int q = 0; q < rank; ++q) {
        const double mv = mid[static_cast<std::size_t>(r) * rank + q];
        for (int j = 0; j < out; ++j)
          y[static_cast<std::size_t>(r) * out + j] +=
              mv * lora->b->data[static_cast<std::size_t>(q) * out + j];
      }
  }
  return y;
}

dvec gelu_all(dvec x) {
  for (double& v : x) v = detail::gelu_value(v);
  return x;
}

dvec layer_norm_rows(const dvec& x, int rows, int n, const Tensor& gain, const Tensor& bias,
                     double eps = 1e-6) {
  dvec y(x.size());
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<std::size_t>(r) * n;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += xr[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i)
      y[static_cast<std::size_t>(r) * n + i] = (xr[i] - mean) * inv * gain.data[i] + bias.data[i];
  }
  return y;
}

// layer norm across the channel dim of a (C,plane) buffer
dvec layer_norm_channels(const dvec& x, int c, int64_t plane, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-6) {
  dvec y(x.size());
  for (int64_t p = 0; p < plane; ++p) {
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += x[i * plane + p];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) {
      const double d = x[i * plane + p] - mean;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < c; ++i)
      y[i * plane + p] = (x[i * plane + p] - mean) * inv * gain.data[i] + bias.data[i];
  }
  return y;
}

dvec mlp_ref(const dvec& x, int rows, const MlpWeights& w) {
  return linear(gelu_all(linear(x, rows, *w.w1, *w.b1)), rows, *w.w2, *w.b2);
}

dvec adapter_core_ref(const dvec& x, int rows, const AdapterWeights& w) {
  return linear(gelu_all(linear(x, rows, *w.w_down, *w.b_down)), rows, *w.w_up, *w.b_up);
}

// Multi-head attention, optionally with a (heads,tq,tk) pre-softmax bias.
dvec mha_ref(const dvec& q_in, int tq, const dvec& k_in, const dvec& v_in, int tk,
             const AttentionWeights& w, int heads) {
  const int dim = w.wq->shape[0];
  const int dk = dim / heads;
  const double inv_sqrt_dk =
      static_cast<double>(1.0f / std::sqrt(static_cast<float>(dk)));
  auto q = linear(q_in, tq, *w.wq, *w.bq, w.lora_q);
  auto k = linear(k_in, tk, *w.wk, *w.bk, w.lora_k);
  auto v = linear(v_in, tk, *w.wv, *w.bv, w.lora_v);
  dvec merged(static_cast<std::size_t>(tq) * dim);
  dvec scores(static_cast<std::size_t>(tk));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < tq; ++i) {
      for (int j = 0; j < tk; ++j) {
        double s = 0.0;
        for (int e = 0; e < dk; ++e)
          s += q[static_cast<std::size_t>(i) * dim + h * dk + e] *
               k[static_cast<std::size_t>(j) * dim + h * dk + e];
        s *= inv_sqrt_dk;
        if (w.pos)
          s += w.pos->data[(static_cast<std::size_t>(h) * tq + i) * tk + j];
        scores[j] = s;
      }
      double mx = scores[0];
      for (int j = 1; j < tk; ++j) mx = std::max(mx, scores[j]);
      double denom = 0.0;
      for (int j = 0; j < tk; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      for (int e = 0; e < dk; ++e) {
        double acc = 0.0;
        for (int j = 0; j < tk; ++j)
          acc += scores[j] / denom * v[static_cast<std::size_t>(j) * dim + h * dk + e];
        merged[static_cast<std::size_t>(i) * dim + h * dk + e] = acc;
      }
    }
  }
  return linear(merged, tq, *w.wo, *w.bo, w.lora_o);
}

}  // namespace

double ref_model_loss(const Model& model, const float* image, const float* target,
                      float lambda_ce) {
  const EncoderConfig& ec = model.cfg.encoder;
  const DecoderConfig& dc = model.cfg.decoder;
  if (dc.num_class != 2)
    throw ContractError("ref_model_loss: only the two-class head is supported");
  const int img = ec.image_size;
  const int g = ec.grid_size();
  const int d = ec.embed_dim;
  const int p = ec.patch_size;

  // patch embedding: strided conv then (g,g,d) token grid with positions
  dvec grid(static_cast<std::size_t>(g) * g * d);
  for (int oy = 0; oy < g; ++oy)
    for (int ox = 0; ox < g; ++ox)
      for (int oc = 0; oc < d; ++oc) {
        double acc = model.encoder.patch_b->data[oc];
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < p; ++ky)
            for (int kx = 0; kx < p; ++kx)
              acc += static_cast<double>(
                         image[(static_cast<std::size_t>(c) * img + oy * p + ky) * img + ox * p +
                               kx]) *
                     model.encoder.patch_w
                         ->data[((static_cast<std::size_t>(oc) * 3 + c) * p + ky) * p + kx];
        grid[(static_cast<std::size_t>(oy) * g + ox) * d + oc] =
            acc + model.encoder.abs_pos->data[(static_cast<std::size_t>(oy) * g + ox) * d + oc];
      }

  // encoder blocks (window attention + MLP, optional deltas)
  const int win = ec.window_size;
  const int gp = (g + win - 1) / win * win;
  const int nw = gp / win;
  const int t = win * win;
  const float s = model.adapter_scaling();
  for (const auto& block : model.encoder.blocks) {
    auto normed = layer_norm_rows(grid, g * g, d, *block.ln1_gain, *block.ln1_bias);
    dvec attn_out(grid.size(), 0.0);
    dvec window(static_cast<std::size_t>(t) * d);
    for (int wy = 0; wy < nw; ++wy)
      for (int wx = 0; wx < nw; ++wx) {
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const int y = wy * win + i, x = wx * win + j;
            for (int cc = 0; cc < d; ++cc)
              window[(static_cast<std::size_t>(i) * win + j) * d + cc] =
                  (y < g && x < g) ? normed[(static_cast<std::size_t>(y) * g + x) * d + cc] : 0.0;
          }
        auto out = mha_ref(window, t, window, window, t, block.attn, ec.num_heads);
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const int y = wy * win + i, x = wx * win + j;
            if (y < g && x < g)
              for (int cc = 0; cc < d; ++cc)
                attn_out[(static_cast<std::size_t>(y) * g + x) * d + cc] =
                    out[(static_cast<std::size_t>(i) * win + j) * d + cc];
          }
      }
    if (block.seq_adapter) {
      auto delta = adapter_core_ref(attn_out, g * g, *block.seq_adapter);
      for (std::size_t i = 0; i < attn_out.size(); ++i) attn_out[i] += delta[i];
    }
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] += attn_out[i];
    auto normed2 = layer_norm_rows(grid, g * g, d, *block.ln2_gain, *block.ln2_bias);
    auto mlp_out = mlp_ref(normed2, g * g, block.mlp);
    if (block.par_adapter) {
      auto delta = adapter_core_ref(normed2, g * g, *block.par_adapter);
      for (std::size_t i = 0; i < grid.size(); ++i) grid[i] += s * delta[i] + mlp_out[i];
    } else {
      for (std::size_t i = 0; i < grid.size(); ++i) grid[i] += mlp_out[i];
    }
  }

  // neck: (g,g,d) -> (neck,g,g)
  const int neck_dim = ec.neck_dim;
  const int64_t plane = static_cast<int64_t>(g) * g;
  dvec neck1(static_cast<std::size_t>(neck_dim) * plane);
  for (int oc = 0; oc < neck_dim; ++oc)
    for (int64_t pp = 0; pp < plane; ++pp) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c)
        acc += grid[pp * d + c] *
               model.encoder.neck_w1->data[static_cast<std::size_t>(oc) * d + c];
      neck1[oc * plane + pp] = acc;
    }
  neck1 = layer_norm_channels(neck1, neck_dim, plane, *model.encoder.neck_ln1_gain,
                              *model.encoder.neck_ln1_bias);
  dvec emb(static_cast<std::size_t>(neck_dim) * plane, 0.0);
  for (int oc = 0; oc < neck_dim; ++oc)
    for (int oy = 0; oy < g; ++oy)
      for (int ox = 0; ox < g; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < neck_dim; ++c)
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= g) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1;
              if (ix < 0 || ix >= g) continue;
              acc += neck1[(static_cast<std::size_t>(c) * g + iy) * g + ix] *
                     model.encoder.neck_w2
                         ->data[((static_cast<std::size_t>(oc) * neck_dim + c) * 3 + ky) * 3 + kx];
            }
          }
        emb[(static_cast<std::size_t>(oc) * g + oy) * g + ox] = acc;
      }
  emb = layer_norm_channels(emb, neck_dim, plane, *model.encoder.neck_ln2_gain,
                            *model.encoder.neck_ln2_bias);

  // decoder: prompt, two-way transformer, upsample, classify
  const int td = dc.token_dim;
  const int hw = g * g;
  dvec img_rows(static_cast<std::size_t>(hw) * td);
  dvec pos_rows(static_cast<std::size_t>(hw) * td);
  for (int pp = 0; pp < hw; ++pp)
    for (int c = 0; c < td; ++c) {
      img_rows[static_cast<std::size_t>(pp) * td + c] =
          emb[static_cast<std::size_t>(c) * hw + pp] + model.prompt.dense_default->data[c];
      pos_rows[static_cast<std::size_t>(pp) * td + c] =
          model.prompt.pos_table->data[static_cast<std::size_t>(c) * hw + pp];
    }
  const int nc = dc.num_class;
  dvec tokens(static_cast<std::size_t>(nc) * td);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = model.mask_tokens->data[i];

  auto add_rows = [](const dvec& a, const dvec& b) {
    dvec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
  };
  for (const auto& block : model.decoder.blocks) {
    auto self_out = mha_ref(tokens, nc, tokens, tokens, nc, block.self_attn, dc.num_heads);
    tokens = layer_norm_rows(add_rows(tokens, self_out), nc, td, *block.ln1_gain, *block.ln1_bias);
    auto keys = add_rows(img_rows, pos_rows);
    auto t2i = mha_ref(tokens, nc, keys, img_rows, hw, block.cross_token_to_image, dc.num_heads);
    tokens = layer_norm_rows(add_rows(tokens, t2i), nc, td, *block.ln2_gain, *block.ln2_bias);
    auto mlp_out = mlp_ref(tokens, nc, block.mlp);
    tokens = layer_norm_rows(add_rows(tokens, mlp_out), nc, td, *block.ln3_gain, *block.ln3_bias);
    auto queries = add_rows(img_rows, pos_rows);
    auto i2t = mha_ref(queries, hw, tokens, tokens, nc, block.cross_image_to_token, dc.num_heads);
    img_rows =
        layer_norm_rows(add_rows(img_rows, i2t), hw, td, *block.ln4_gain, *block.ln4_bias);
  }
  auto keys = add_rows(img_rows, pos_rows);
  auto final_attn =
      mha_ref(tokens, nc, keys, img_rows, hw, model.decoder.final_token_to_image, dc.num_heads);
  tokens = layer_norm_rows(add_rows(tokens, final_attn), nc, td, *model.decoder.ln_final_gain,
                           *model.decoder.ln_final_bias);
  auto hyper = gelu_all(linear(tokens, nc, *model.decoder.out_mlp_w1, *model.decoder.out_mlp_b1));
  hyper = gelu_all(linear(hyper, nc, *model.decoder.out_mlp_w2, *model.decoder.out_mlp_b2));
  hyper = linear(hyper, nc, *model.decoder.out_mlp_w3, *model.decoder.out_mlp_b3);

  // transpose image rows back to channel planes and upsample 4x
  dvec emb_chw(static_cast<std::size_t>(td) * hw);
  for (int c = 0; c < td; ++c)
    for (int pp = 0; pp < hw; ++pp)
      emb_chw[static_cast<std::size_t>(c) * hw + pp] = img_rows[static_cast<std::size_t>(pp) * td + c];

  auto tconv = [](const dvec& x, int c_in, int h, int w, const Tensor& kernel, const Tensor& bias) {
    const int oc_n = kernel.shape[1], kh = kernel.shape[2], kw = kernel.shape[3];
    const int oh = (h - 1) * 2 + kh, ow = (w - 1) * 2 + kw;
    dvec out(static_cast<std::size_t>(oc_n) * oh * ow);
    for (int oc = 0; oc < oc_n; ++oc)
      std::fill_n(out.begin() + static_cast<std::size_t>(oc) * oh * ow, static_cast<std::size_t>(oh) * ow,
                  static_cast<double>(bias.data[oc]));
    for (int c = 0; c < c_in; ++c)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const double xv = x[(static_cast<std::size_t>(c) * h + iy) * w + ix];
          for (int oc = 0; oc < oc_n; ++oc)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                out[(static_cast<std::size_t>(oc) * oh + iy * 2 + ky) * ow + ix * 2 + kx] +=
                    xv * kernel.data[((static_cast<std::size_t>(c) * oc_n + oc) * kh + ky) * kw + kx];
        }
    return out;
  };
  auto up1 = tconv(emb_chw, td, g, g, *model.decoder.up_conv1_w, *model.decoder.up_conv1_b);
  up1 = layer_norm_channels(up1, dc.upsample_mid, static_cast<int64_t>(2 * g) * 2 * g,
                            *model.decoder.up_ln_gain, *model.decoder.up_ln_bias);
  up1 = gelu_all(std::move(up1));
  auto up2 = tconv(up1, dc.upsample_mid, 2 * g, 2 * g, *model.decoder.up_conv2_w,
                   *model.decoder.up_conv2_b);
  up2 = gelu_all(std::move(up2));

  const int uo = dc.upsample_out;
  const int uh = 4 * g, uw = 4 * g;
  dvec full(static_cast<std::size_t>(uo) * img * img);
  for (int c = 0; c < uo; ++c)
    detail::resize_plane(up2.data() + static_cast<std::size_t>(c) * uh * uw, uh, uw,
                         full.data() + static_cast<std::size_t>(c) * img * img, img, img, false);

  // logits, channel softmax, combined loss
  const int64_t pixels = static_cast<int64_t>(img) * img;
  double ce = 0.0, inter = 0.0, sum_y = 0.0, sum_p = 0.0;
  for (int64_t pp = 0; pp < pixels; ++pp) {
    double logit0 = 0.0, logit1 = 0.0;
    for (int c = 0; c < uo; ++c) {
      const double f = full[static_cast<std::size_t>(c) * pixels + pp];
      logit0 += hyper[c] * f;
      logit1 += hyper[static_cast<std::size_t>(uo) + c] * f;
    }
    const double mx = std::max(logit0, logit1);
    const double e0 = std::exp(logit0 - mx), e1 = std::exp(logit1 - mx);
    const double prob = e1 / (e0 + e1);
    const double y = target[pp];
    const double pc = std::clamp(prob, 1e-7, 1.0 - 1e-7);
    ce += -y * std::log(pc) - (1.0 - y) * std::log(1.0 - pc);
    inter += prob * y;
    sum_y += y;
    sum_p += prob;
  }
  ce /= static_cast<double>(pixels);
  const double dice = 1.0 - (2.0 * inter + 1e-6) / (sum_y + sum_p + 1e-6);
  return lambda_ce * ce + (1.0 - lambda_ce) * dice;
}

}  // namespace crackseg
