#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace crackseg::detail {

inline double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.39894228040143267794;  // 1/sqrt(2*pi)
}

/// Exact-CDF GELU, x * Phi(x).
inline double gelu_value(double x) { return x * normal_cdf(x); }

inline double gelu_derivative(double x) { return normal_cdf(x) + x * normal_pdf(x); }

/// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

/// Sampling taps for one output coordinate under the half-pixel-center
/// convention. Source indices are clamped to the valid range (replicate).
struct ResizeTaps {
  int idx[4];
  double w[4];
  int count;
};

inline ResizeTaps resize_taps(int out_i, int src_n, int dst_n, bool bicubic) {
  const double pos = (out_i + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
  const double base = std::floor(pos);
  const double frac = pos - base;
  const int b = static_cast<int>(base);
  auto clamp_idx = [src_n](int i) { return std::clamp(i, 0, src_n - 1); };
  ResizeTaps t{};
  if (!bicubic) {
    t.count = 2;
    t.idx[0] = clamp_idx(b);
    t.idx[1] = clamp_idx(b + 1);
    t.w[0] = 1.0 - frac;
    t.w[1] = frac;
  } else {
    t.count = 4;
    for (int k = 0; k < 4; ++k) {
      t.idx[k] = clamp_idx(b - 1 + k);
      t.w[k] = cubic_weight(frac - (k - 1));
    }
  }
  return t;
}

/// Resizes a single plane. Works for any arithmetic T; accumulation in double.
template <typename T>
void resize_plane(const T* src, int sh, int sw, T* dst, int dh, int dw, bool bicubic) {
  std::vector<ResizeTaps> row_taps(static_cast<std::size_t>(dh));
  std::vector<ResizeTaps> col_taps(static_cast<std::size_t>(dw));
  for (int y = 0; y < dh; ++y) row_taps[y] = resize_taps(y, sh, dh, bicubic);
  for (int x = 0; x < dw; ++x) col_taps[x] = resize_taps(x, sw, dw, bicubic);
  for (int y = 0; y < dh; ++y) {
    const ResizeTaps& ry = row_taps[y];
    for (int x = 0; x < dw; ++x) {
      const ResizeTaps& rx = col_taps[x];
      double acc = 0.0;
      for (int a = 0; a < ry.count; ++a) {
        const T* row = src + static_cast<std::size_t>(ry.idx[a]) * sw;
        double partial = 0.0;
        for (int b = 0; b < rx.count; ++b) partial += rx.w[b] * static_cast<double>(row[rx.idx[b]]);
        acc += ry.w[a] * partial;
      }
      dst[static_cast<std::size_t>(y) * dw + x] = static_cast<T>(acc);
    }
  }
}

/// Normalized 1-D Gaussian, sigma = 0.3*((k-1)/2 - 1) + 0.8, entries sum to 1.
std::vector<double> gaussian_taps_1d(int k);

}  // namespace crackseg::detail
