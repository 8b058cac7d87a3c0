#include "crackseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "crackseg/kernels.hpp"

namespace crackseg::ops {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// C(M,N) += A(M,K) * B(K,N)
void gemm_nn(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const float* a = A + i * K;
    float* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const float av = a[k];
      const float* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// DA(M,K) += G(M,N) * B(K,N)^T
void gemm_nt(const float* G, const float* B, float* DA, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const float* g = G + i * N;
    float* da = DA + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const float* b = B + k * N;
      float s = 0.0f;
      for (int64_t j = 0; j < N; ++j) s += g[j] * b[j];
      da[k] += s;
    }
  }
}

// DB(K,N) += A(M,K)^T * G(M,N)
void gemm_tn(const float* A, const float* G, float* DB, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const float* a = A + m * K;
    const float* g = G + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const float av = a[k];
      float* db = DB + k * N;
      for (int64_t j = 0; j < N; ++j) db[j] += av * g[j];
    }
  }
}

TensorPtr make_output(Shape shape, bool tunable) {
  auto out = make_tensor(std::move(shape));
  out->tunable = tunable;
  return out;
}

}  // namespace

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape == b->shape,
          "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = make_output(a->shape, a->tunable || b->tunable);
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  tape.record("add", [a, b, out] {
    if (!out->has_grad()) return;
    a->accumulate_grad(out->grad);
    b->accumulate_grad(out->grad);
  });
  return out;
}

TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& b) {
  const int n = x->cols();
  require(b->numel() == n, "add_bias: bias " + shape_str(b->shape) + " does not match last dim of " +
                               shape_str(x->shape));
  auto out = make_output(x->shape, x->tunable || b->tunable);
  const int64_t rows = x->rows();
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < n; ++c) out->data[r * n + c] = x->data[r * n + c] + b->data[c];
  tape.record("add_bias", [x, b, out, rows, n] {
    if (!out->has_grad()) return;
    x->accumulate_grad(out->grad);
    if (b->tunable) {
      b->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) b->grad[c] += out->grad[r * n + c];
    }
  });
  return out;
}

TensorPtr add_channel_bias(Tape& tape, const TensorPtr& x, const TensorPtr& v) {
  require(!x->shape.empty() && v->numel() == x->shape[0],
          "add_channel_bias: vector " + shape_str(v->shape) + " does not match first dim of " +
              shape_str(x->shape));
  const int channels = x->shape[0];
  const int64_t plane = x->numel() / channels;
  auto out = make_output(x->shape, x->tunable || v->tunable);
  for (int c = 0; c < channels; ++c)
    for (int64_t p = 0; p < plane; ++p) out->data[c * plane + p] = x->data[c * plane + p] + v->data[c];
  tape.record("add_channel_bias", [x, v, out, channels, plane] {
    if (!out->has_grad()) return;
    x->accumulate_grad(out->grad);
    if (v->tunable) {
      v->ensure_grad();
      for (int c = 0; c < channels; ++c) {
        float s = 0.0f;
        for (int64_t p = 0; p < plane; ++p) s += out->grad[c * plane + p];
        v->grad[c] += s;
      }
    }
  });
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& x, float factor) {
  auto out = make_output(x->shape, x->tunable);
  for (int64_t i = 0; i < x->numel(); ++i) out->data[i] = x->data[i] * factor;
  tape.record("scale", [x, out, factor] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i] * factor;
  });
  return out;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
  auto out = make_output({1}, x->tunable);
  double acc = 0.0;
  for (float v : x->data) acc += v;
  out->data[0] = static_cast<float>(acc);
  tape.record("sum", [x, out] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    const float g = out->grad[0];
    for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
  });
  return out;
}

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require(!a->shape.empty() && !b->shape.empty(), "matmul: empty shape");
  const int64_t K = a->cols();
  require(b->shape[0] == K, "matmul: inner dimensions disagree, " + shape_str(a->shape) + " x " +
                                shape_str(b->shape));
  const int64_t M = a->rows();
  const int64_t N = b->numel() / K;
  Shape out_shape(a->shape.begin(), a->shape.end() - 1);
  out_shape.insert(out_shape.end(), b->shape.begin() + 1, b->shape.end());
  if (out_shape.empty()) out_shape = {1};
  auto out = make_output(std::move(out_shape), a->tunable || b->tunable);
  gemm_nn(a->data.data(), b->data.data(), out->data.data(), M, K, N);
  tape.record("matmul", [a, b, out, M, K, N] {
    if (!out->has_grad()) return;
    const float* g = out->grad.data();
    if (a->tunable) {
      a->ensure_grad();
      gemm_nt(g, b->data.data(), a->grad.data(), M, K, N);
    }
    if (b->tunable) {
      b->ensure_grad();
      gemm_tn(a->data.data(), g, b->grad.data(), M, K, N);
    }
  });
  return out;
}

TensorPtr transpose(Tape& tape, const TensorPtr& x) {
  require(x->shape.size() == 2, "transpose: expected 2-D, got " + shape_str(x->shape));
  const int r = x->shape[0], c = x->shape[1];
  auto out = make_output({c, r}, x->tunable);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->data[static_cast<int64_t>(j) * r + i] = x->data[static_cast<int64_t>(i) * c + j];
  tape.record("transpose", [x, out, r, c] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        x->grad[static_cast<int64_t>(i) * c + j] += out->grad[static_cast<int64_t>(j) * r + i];
  });
  return out;
}

TensorPtr softmax(Tape& tape, const TensorPtr& x, int axis) {
  require(axis >= 0 && axis < static_cast<int>(x->shape.size()),
          "softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x->shape));
  for (float v : x->data)
    if (std::isnan(v)) throw NumericError("softmax: input contains NaN");
  int64_t outer = 1, inner = 1;
  const int n = x->shape[axis];
  for (int i = 0; i < axis; ++i) outer *= x->shape[i];
  for (std::size_t i = axis + 1; i < x->shape.size(); ++i) inner *= x->shape[i];
  auto out = make_output(x->shape, x->tunable);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = -HUGE_VAL;
      for (int i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(x->data[base + i * inner]));
      double denom = 0.0;
      for (int i = 0; i < n; ++i) denom += std::exp(static_cast<double>(x->data[base + i * inner]) - mx);
      for (int i = 0; i < n; ++i)
        out->data[base + i * inner] =
            static_cast<float>(std::exp(static_cast<double>(x->data[base + i * inner]) - mx) / denom);
    }
  }
  tape.record("softmax", [x, out, outer, inner, n] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * n * inner + in;
        double dot = 0.0;
        for (int i = 0; i < n; ++i)
          dot += static_cast<double>(out->grad[base + i * inner]) * out->data[base + i * inner];
        for (int i = 0; i < n; ++i) {
          const int64_t k = base + i * inner;
          x->grad[k] += out->data[k] * (out->grad[k] - static_cast<float>(dot));
        }
      }
    }
  });
  return out;
}

TensorPtr gelu(Tape& tape, const TensorPtr& x) {
  auto out = make_output(x->shape, x->tunable);
  for (int64_t i = 0; i < x->numel(); ++i)
    out->data[i] = static_cast<float>(detail::gelu_value(x->data[i]));
  tape.record("gelu", [x, out] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int64_t i = 0; i < x->numel(); ++i)
      x->grad[i] += out->grad[i] * static_cast<float>(detail::gelu_derivative(x->data[i]));
  });
  return out;
}

namespace {

// Shared implementation for last-dim and channel layer norm; `stride` is the
// distance between consecutive elements of one normalized group and `groups`
// iterate with `group_base`.
TensorPtr layer_norm_impl(Tape& tape, const char* name, const TensorPtr& x, const TensorPtr& gain,
                          const TensorPtr& bias, float eps, int n, int64_t groups,
                          std::function<int64_t(int64_t)> group_base, int64_t stride) {
  require(gain->numel() == n && bias->numel() == n,
          std::string(name) + ": gain/bias must have length " + std::to_string(n));
  auto out = make_output(x->shape, x->tunable || gain->tunable || bias->tunable);
  auto xhat = std::make_shared<std::vector<float>>(x->data.size());
  auto inv_std = std::make_shared<std::vector<float>>(groups);
  for (int64_t g = 0; g < groups; ++g) {
    const int64_t base = group_base(g);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x->data[base + i * stride];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = x->data[base + i * stride] - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = static_cast<float>(inv);
    for (int i = 0; i < n; ++i) {
      const int64_t k = base + i * stride;
      const float h = static_cast<float>((x->data[k] - mean) * inv);
      (*xhat)[k] = h;
      out->data[k] = h * gain->data[i] + bias->data[i];
    }
  }
  tape.record(name, [x, gain, bias, out, xhat, inv_std, n, groups, group_base, stride] {
    if (!out->has_grad()) return;
    if (gain->tunable) gain->ensure_grad();
    if (bias->tunable) bias->ensure_grad();
    if (x->tunable) x->ensure_grad();
    for (int64_t g = 0; g < groups; ++g) {
      const int64_t base = group_base(g);
      if (gain->tunable || bias->tunable) {
        for (int i = 0; i < n; ++i) {
          const int64_t k = base + i * stride;
          if (gain->tunable) gain->grad[i] += out->grad[k] * (*xhat)[k];
          if (bias->tunable) bias->grad[i] += out->grad[k];
        }
      }
      if (x->tunable) {
        double mean_gh = 0.0, mean_ghh = 0.0;
        for (int i = 0; i < n; ++i) {
          const int64_t k = base + i * stride;
          const double gh = static_cast<double>(out->grad[k]) * gain->data[i];
          mean_gh += gh;
          mean_ghh += gh * (*xhat)[k];
        }
        mean_gh /= n;
        mean_ghh /= n;
        const float inv = (*inv_std)[g];
        for (int i = 0; i < n; ++i) {
          const int64_t k = base + i * stride;
          const double gh = static_cast<double>(out->grad[k]) * gain->data[i];
          x->grad[k] += static_cast<float>(inv * (gh - mean_gh - (*xhat)[k] * mean_ghh));
        }
      }
    }
  });
  return out;
}

}  // namespace

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     float eps) {
  const int n = x->cols();
  const int64_t groups = x->rows();
  return layer_norm_impl(tape, "layer_norm", x, gain, bias, eps, n, groups,
                         [n](int64_t g) { return g * n; }, 1);
}

TensorPtr layer_norm_chw(Tape& tape, const TensorPtr& x, const TensorPtr& gain,
                         const TensorPtr& bias, float eps) {
  require(x->shape.size() == 3, "layer_norm_chw: expected (C,H,W), got " + shape_str(x->shape));
  const int n = x->shape[0];
  const int64_t plane = x->numel() / n;
  return layer_norm_impl(tape, "layer_norm_chw", x, gain, bias, eps, n, plane,
                         [](int64_t g) { return g; }, plane);
}

TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias,
                 int stride, int padding) {
  require(x->shape.size() == 3, "conv2d: input must be (C,H,W), got " + shape_str(x->shape));
  require(kernel->shape.size() == 4,
          "conv2d: kernel must be (OC,IC,kh,kw), got " + shape_str(kernel->shape));
  const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  const int OC = kernel->shape[0], KC = kernel->shape[1], KH = kernel->shape[2],
            KW = kernel->shape[3];
  require(KC == C, "conv2d: kernel channels " + shape_str(kernel->shape) + " do not match input " +
                       shape_str(x->shape));
  require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  require(H + 2 * padding >= KH && W + 2 * padding >= KW,
          "conv2d: kernel larger than padded input, " + shape_str(x->shape) + " vs " +
              shape_str(kernel->shape));
  const int OH = (H + 2 * padding - KH) / stride + 1;
  const int OW = (W + 2 * padding - KW) / stride + 1;
  if (bias) require(bias->numel() == OC, "conv2d: bias length must equal output channels");
  auto out = make_output({OC, OH, OW},
                         x->tunable || kernel->tunable || (bias && bias->tunable));
  for (int oc = 0; oc < OC; ++oc) {
    const float b = bias ? bias->data[oc] : 0.0f;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        float acc = b;
        for (int c = 0; c < C; ++c) {
          const float* xp = x->data.data() + (static_cast<int64_t>(c) * H) * W;
          const float* kp = kernel->data.data() +
                            ((static_cast<int64_t>(oc) * C + c) * KH) * KW;
          for (int ky = 0; ky < KH; ++ky) {
            const int iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < KW; ++kx) {
              const int ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= W) continue;
              acc += xp[static_cast<int64_t>(iy) * W + ix] * kp[ky * KW + kx];
            }
          }
        }
        out->data[(static_cast<int64_t>(oc) * OH + oy) * OW + ox] = acc;
      }
    }
  }
  tape.record("conv2d", [x, kernel, bias, out, C, H, W, OC, KH, KW, OH, OW, stride, padding] {
    if (!out->has_grad()) return;
    if (x->tunable) x->ensure_grad();
    if (kernel->tunable) kernel->ensure_grad();
    if (bias && bias->tunable) bias->ensure_grad();
    for (int oc = 0; oc < OC; ++oc) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          const float g = out->grad[(static_cast<int64_t>(oc) * OH + oy) * OW + ox];
          if (g == 0.0f) continue;
          if (bias && bias->tunable) bias->grad[oc] += g;
          for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < KH; ++ky) {
              const int iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < KW; ++kx) {
                const int ix = ox * stride + kx - padding;
                if (ix < 0 || ix >= W) continue;
                const int64_t xi = (static_cast<int64_t>(c) * H + iy) * W + ix;
                const int64_t ki = ((static_cast<int64_t>(oc) * C + c) * KH + ky) * KW + kx;
                if (kernel->tunable) kernel->grad[ki] += g * x->data[xi];
                if (x->tunable) x->grad[xi] += g * kernel->data[ki];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

TensorPtr transposed_conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& kernel,
                            const TensorPtr& bias, int stride) {
  require(x->shape.size() == 3, "transposed_conv2d: input must be (C,H,W)");
  require(kernel->shape.size() == 4, "transposed_conv2d: kernel must be (IC,OC,kh,kw)");
  require(stride >= 1, "transposed_conv2d: stride must be >= 1");
  const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  const int KC = kernel->shape[0], OC = kernel->shape[1], KH = kernel->shape[2],
            KW = kernel->shape[3];
  require(KC == C, "transposed_conv2d: kernel channels " + shape_str(kernel->shape) +
                       " do not match input " + shape_str(x->shape));
  const int OH = (H - 1) * stride + KH;
  const int OW = (W - 1) * stride + KW;
  if (bias) require(bias->numel() == OC, "transposed_conv2d: bias length must equal output channels");
  auto out = make_output({OC, OH, OW},
                         x->tunable || kernel->tunable || (bias && bias->tunable));
  if (bias)
    for (int oc = 0; oc < OC; ++oc)
      for (int64_t p = 0; p < static_cast<int64_t>(OH) * OW; ++p)
        out->data[oc * static_cast<int64_t>(OH) * OW + p] = bias->data[oc];
  for (int c = 0; c < C; ++c) {
    for (int iy = 0; iy < H; ++iy) {
      for (int ix = 0; ix < W; ++ix) {
        const float xv = x->data[(static_cast<int64_t>(c) * H + iy) * W + ix];
        for (int oc = 0; oc < OC; ++oc) {
          const float* kp =
              kernel->data.data() + ((static_cast<int64_t>(c) * OC + oc) * KH) * KW;
          float* op = out->data.data() + static_cast<int64_t>(oc) * OH * OW;
          for (int ky = 0; ky < KH; ++ky) {
            float* row = op + static_cast<int64_t>(iy * stride + ky) * OW + ix * stride;
            for (int kx = 0; kx < KW; ++kx) row[kx] += xv * kp[ky * KW + kx];
          }
        }
      }
    }
  }
  tape.record("transposed_conv2d", [x, kernel, bias, out, C, H, W, OC, KH, KW, OH, OW, stride] {
    if (!out->has_grad()) return;
    if (x->tunable) x->ensure_grad();
    if (kernel->tunable) kernel->ensure_grad();
    if (bias && bias->tunable) {
      bias->ensure_grad();
      for (int oc = 0; oc < OC; ++oc) {
        double s = 0.0;
        for (int64_t p = 0; p < static_cast<int64_t>(OH) * OW; ++p)
          s += out->grad[oc * static_cast<int64_t>(OH) * OW + p];
        bias->grad[oc] += static_cast<float>(s);
      }
    }
    for (int c = 0; c < C; ++c) {
      for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
          const int64_t xi = (static_cast<int64_t>(c) * H + iy) * W + ix;
          const float xv = x->data[xi];
          float dx = 0.0f;
          for (int oc = 0; oc < OC; ++oc) {
            const float* gp = out->grad.data() + static_cast<int64_t>(oc) * OH * OW;
            const int64_t kbase = ((static_cast<int64_t>(c) * OC + oc) * KH) * KW;
            for (int ky = 0; ky < KH; ++ky) {
              const float* grow = gp + static_cast<int64_t>(iy * stride + ky) * OW + ix * stride;
              for (int kx = 0; kx < KW; ++kx) {
                const float g = grow[kx];
                if (kernel->tunable) kernel->grad[kbase + ky * KW + kx] += g * xv;
                dx += g * kernel->data[kbase + ky * KW + kx];
              }
            }
          }
          if (x->tunable) x->grad[xi] += dx;
        }
      }
    }
  });
  return out;
}

TensorPtr resize(Tape& tape, const TensorPtr& x, int target_h, int target_w, ResizeMode mode) {
  require(x->shape.size() == 3, "resize: input must be (C,H,W), got " + shape_str(x->shape));
  require(target_h >= 1 && target_w >= 1, "resize: target dims must be >= 1");
  const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  if (target_h == H && target_w == W) {
    auto out = make_output(x->shape, x->tunable);
    out->data = x->data;
    tape.record("resize", [x, out] {
      if (!out->has_grad() || !x->tunable) return;
      x->accumulate_grad(out->grad);
    });
    return out;
  }
  const bool bicubic = mode == ResizeMode::Bicubic;
  auto out = make_output({C, target_h, target_w}, x->tunable);
  for (int c = 0; c < C; ++c)
    detail::resize_plane(x->data.data() + static_cast<int64_t>(c) * H * W, H, W,
                         out->data.data() + static_cast<int64_t>(c) * target_h * target_w, target_h,
                         target_w, bicubic);
  tape.record("resize", [x, out, C, H, W, target_h, target_w, bicubic] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    std::vector<detail::ResizeTaps> row_taps(target_h), col_taps(target_w);
    for (int y = 0; y < target_h; ++y) row_taps[y] = detail::resize_taps(y, H, target_h, bicubic);
    for (int xx = 0; xx < target_w; ++xx) col_taps[xx] = detail::resize_taps(xx, W, target_w, bicubic);
    for (int c = 0; c < C; ++c) {
      const float* g = out->grad.data() + static_cast<int64_t>(c) * target_h * target_w;
      float* dx = x->grad.data() + static_cast<int64_t>(c) * H * W;
      for (int y = 0; y < target_h; ++y) {
        for (int xx = 0; xx < target_w; ++xx) {
          const float gv = g[static_cast<int64_t>(y) * target_w + xx];
          if (gv == 0.0f) continue;
          for (int a = 0; a < row_taps[y].count; ++a)
            for (int b = 0; b < col_taps[xx].count; ++b)
              dx[static_cast<int64_t>(row_taps[y].idx[a]) * W + col_taps[xx].idx[b]] +=
                  static_cast<float>(row_taps[y].w[a] * col_taps[xx].w[b]) * gv;
        }
      }
    }
  });
  return out;
}

TensorPtr gather(Tape& tape, const TensorPtr& x, std::vector<int64_t> idx, Shape out_shape) {
  require(shape_numel(out_shape) == static_cast<int64_t>(idx.size()),
          "gather: index count does not match output shape " + shape_str(out_shape));
  auto indices = std::make_shared<const std::vector<int64_t>>(std::move(idx));
  auto out = make_output(std::move(out_shape), x->tunable);
  const int64_t n = x->numel();
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const int64_t k = (*indices)[i];
    require(k < n, "gather: index out of range");
    out->data[i] = k >= 0 ? x->data[k] : 0.0f;
  }
  tape.record("gather", [x, out, indices] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < indices->size(); ++i) {
      const int64_t k = (*indices)[i];
      if (k >= 0) x->grad[k] += out->grad[i];
    }
  });
  return out;
}

TensorPtr slice_flat(Tape& tape, const TensorPtr& x, int64_t offset, Shape out_shape) {
  const int64_t n = shape_numel(out_shape);
  require(offset >= 0 && offset + n <= x->numel(),
          "slice_flat: range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
              ") out of bounds for " + shape_str(x->shape));
  auto out = make_output(std::move(out_shape), x->tunable);
  std::memcpy(out->data.data(), x->data.data() + offset, static_cast<std::size_t>(n) * sizeof(float));
  tape.record("slice_flat", [x, out, offset, n] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i) x->grad[offset + i] += out->grad[i];
  });
  return out;
}

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, int col_begin, int col_end) {
  const int n = x->cols();
  require(0 <= col_begin && col_begin < col_end && col_end <= n,
          "slice_cols: bad column range for " + shape_str(x->shape));
  const int m = col_end - col_begin;
  Shape out_shape = x->shape;
  out_shape.back() = m;
  auto out = make_output(std::move(out_shape), x->tunable);
  const int64_t rows = x->rows();
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out->data.data() + r * m, x->data.data() + r * n + col_begin,
                static_cast<std::size_t>(m) * sizeof(float));
  tape.record("slice_cols", [x, out, rows, n, m, col_begin] {
    if (!out->has_grad() || !x->tunable) return;
    x->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < m; ++c) x->grad[r * n + col_begin + c] += out->grad[r * m + c];
  });
  return out;
}

TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const int64_t rows = parts[0]->rows();
  int total = 0;
  bool tunable = false;
  for (const auto& p : parts) {
    require(p->rows() == rows, "concat_cols: row count mismatch");
    total += p->cols();
    tunable = tunable || p->tunable;
  }
  Shape out_shape = parts[0]->shape;
  out_shape.back() = total;
  auto out = make_output(std::move(out_shape), tunable);
  int off = 0;
  for (const auto& p : parts) {
    const int m = p->cols();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out->data.data() + r * total + off, p->data.data() + r * m,
                  static_cast<std::size_t>(m) * sizeof(float));
    off += m;
  }
  tape.record("concat_cols", [parts, out, rows, total] {
    if (!out->has_grad()) return;
    int off = 0;
    for (const auto& p : parts) {
      const int m = p->cols();
      if (p->tunable) {
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < m; ++c) p->grad[r * m + c] += out->grad[r * total + off + c];
      }
      off += m;
    }
  });
  return out;
}

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const int cols = parts[0]->cols();
  int64_t rows = 0;
  bool tunable = false;
  for (const auto& p : parts) {
    require(p->cols() == cols, "concat_rows: column count mismatch");
    rows += p->rows();
    tunable = tunable || p->tunable;
  }
  auto out = make_output({static_cast<int>(rows), cols}, tunable);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out->data.data() + off, p->data.data(), p->data.size() * sizeof(float));
    off += p->numel();
  }
  tape.record("concat_rows", [parts, out] {
    if (!out->has_grad()) return;
    int64_t off = 0;
    for (const auto& p : parts) {
      if (p->tunable) {
        p->ensure_grad();
        for (int64_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[off + i];
      }
      off += p->numel();
    }
  });
  return out;
}

namespace {
constexpr double kEps = 1e-7;      // cross-entropy probability clamp
constexpr double kSmooth = 1e-6;   // dice smoothing
}

TensorPtr cross_entropy(Tape& tape, const TensorPtr& prob, const TensorPtr& target) {
  require(prob->shape == target->shape, "cross_entropy: shape mismatch " + shape_str(prob->shape) +
                                            " vs " + shape_str(target->shape));
  const int64_t n = prob->numel();
  auto out = make_output({1}, prob->tunable);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double y = target->data[i];
    const double p = std::clamp(static_cast<double>(prob->data[i]), kEps, 1.0 - kEps);
    acc += -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
  }
  out->data[0] = static_cast<float>(acc / n);
  tape.record("cross_entropy", [prob, target, out, n] {
    if (!out->has_grad() || !prob->tunable) return;
    prob->ensure_grad();
    const double g = out->grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      const double p = prob->data[i];
      if (p < kEps || p > 1.0 - kEps) continue;  // clamped region has zero slope
      const double y = target->data[i];
      prob->grad[i] += static_cast<float>(g * (-y / p + (1.0 - y) / (1.0 - p)));
    }
  });
  return out;
}

TensorPtr dice_loss(Tape& tape, const TensorPtr& prob, const TensorPtr& target) {
  require(prob->shape == target->shape, "dice_loss: shape mismatch " + shape_str(prob->shape) +
                                            " vs " + shape_str(target->shape));
  const int64_t n = prob->numel();
  double inter = 0.0, sum_y = 0.0, sum_p = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    inter += static_cast<double>(prob->data[i]) * target->data[i];
    sum_y += target->data[i];
    sum_p += prob->data[i];
  }
  const double denom = sum_y + sum_p + kSmooth;
  auto out = make_output({1}, prob->tunable);
  out->data[0] = static_cast<float>(1.0 - (2.0 * inter + kSmooth) / denom);
  tape.record("dice_loss", [prob, target, out, n, inter, denom] {
    if (!out->has_grad() || !prob->tunable) return;
    prob->ensure_grad();
    const double g = out->grad[0];
    const double numer = 2.0 * inter + kSmooth;
    for (int64_t i = 0; i < n; ++i) {
      const double y = target->data[i];
      prob->grad[i] += static_cast<float>(g * (numer - 2.0 * y * denom) / (denom * denom));
    }
  });
  return out;
}

}  // namespace crackseg::ops
