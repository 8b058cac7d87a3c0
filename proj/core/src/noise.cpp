#include "crackseg/noise.hpp"

#include <algorithm>
#include <cmath>

#include "crackseg/errors.hpp"
#include "crackseg/kernels.hpp"

namespace crackseg {

void NoiseSpec::validate() const {
  if (case_id != 1 && case_id != 2) throw ConfigError("noise case must be 1 or 2");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("noise kernel size must be odd and >= 1");
  if (brightness_delta < 0) throw ConfigError("brightness delta must be >= 0");
  if (scale < 1) throw ConfigError("noise scale must be >= 1");
}

Hsv rgb_to_hsv(uint8_t r, uint8_t g, uint8_t b) {
  const double rd = r, gd = g, bd = b;
  const double mx = std::max({rd, gd, bd});
  const double mn = std::min({rd, gd, bd});
  const double delta = mx - mn;
  Hsv out{0.0, 0.0, mx};
  if (delta > 0.0) {
    if (mx == rd)
      out.h = 60.0 * std::fmod((gd - bd) / delta, 6.0);
    else if (mx == gd)
      out.h = 60.0 * ((bd - rd) / delta + 2.0);
    else
      out.h = 60.0 * ((rd - gd) / delta + 4.0);
    if (out.h < 0.0) out.h += 360.0;
  }
  if (mx > 0.0) out.s = delta / mx * 255.0;
  return out;
}

void hsv_to_rgb(const Hsv& hsv, uint8_t& r, uint8_t& g, uint8_t& b) {
  const double c = hsv.v * hsv.s / 255.0;
  const double hp = hsv.h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double rp = 0.0, gp = 0.0, bp = 0.0;
  if (hp < 1.0) {
    rp = c; gp = x;
  } else if (hp < 2.0) {
    rp = x; gp = c;
  } else if (hp < 3.0) {
    gp = c; bp = x;
  } else if (hp < 4.0) {
    gp = x; bp = c;
  } else if (hp < 5.0) {
    rp = x; bp = c;
  } else {
    rp = c; bp = x;
  }
  const double m = hsv.v - c;
  auto to_u8 = [](double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  };
  r = to_u8(rp + m);
  g = to_u8(gp + m);
  b = to_u8(bp + m);
}

std::vector<double> gaussian_kernel(int k) {
  const auto taps = detail::gaussian_taps_1d(k);
  std::vector<double> kernel(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) kernel[static_cast<std::size_t>(y) * k + x] = taps[y] * taps[x];
  return kernel;
}

ImageU8 gaussian_blur(const ImageU8& image, int k) {
  const auto taps = detail::gaussian_taps_1d(k);
  const int r = (k - 1) / 2;
  const int w = image.width, h = image.height, ch = image.channels;
  ImageU8 out = image;
  std::vector<double> plane(static_cast<std::size_t>(w) * h);
  std::vector<double> tmp(plane.size());
  for (int c = 0; c < ch; ++c) {
    for (int64_t p = 0; p < image.pixel_count(); ++p) plane[p] = image.pixels[p * ch + c];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i)
          acc += taps[i] * plane[static_cast<std::size_t>(y) * w + std::clamp(x + i - r, 0, w - 1)];
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i)
          acc += taps[i] * tmp[static_cast<std::size_t>(std::clamp(y + i - r, 0, h - 1)) * w + x];
        out.pixels[(static_cast<std::size_t>(y) * w + x) * ch + c] =
            static_cast<uint8_t>(std::lround(std::clamp(acc, 0.0, 255.0)));
      }
  }
  return out;
}

ImageU8 noise_case1(const ImageU8& image, int brightness_delta, int k) {
  if (image.channels != 3) throw ContractError("noise_case1: RGB image required");
  ImageU8 darkened = image;
  for (int64_t p = 0; p < image.pixel_count(); ++p) {
    Hsv hsv = rgb_to_hsv(image.pixels[p * 3], image.pixels[p * 3 + 1], image.pixels[p * 3 + 2]);
    hsv.v = std::clamp(hsv.v - brightness_delta, 0.0, 255.0);
    hsv_to_rgb(hsv, darkened.pixels[p * 3], darkened.pixels[p * 3 + 1], darkened.pixels[p * 3 + 2]);
  }
  return gaussian_blur(darkened, k);
}

ImageU8 noise_case2(const ImageU8& image, int k, int scale) {
  ImageU8 blurred = gaussian_blur(image, k);
  const int dw = std::max(1, image.width / scale);
  const int dh = std::max(1, image.height / scale);
  const int w = image.width, h = image.height, ch = image.channels;
  std::vector<double> plane(static_cast<std::size_t>(w) * h);
  std::vector<double> down(static_cast<std::size_t>(dw) * dh);
  std::vector<double> up(plane.size());
  ImageU8 out = image;
  for (int c = 0; c < ch; ++c) {
    for (int64_t p = 0; p < image.pixel_count(); ++p) plane[p] = blurred.pixels[p * ch + c];
    detail::resize_plane(plane.data(), h, w, down.data(), dh, dw, true);
    for (double& v : down) v = std::lround(std::clamp(v, 0.0, 255.0));
    detail::resize_plane(down.data(), dh, dw, up.data(), h, w, true);
    for (int64_t p = 0; p < image.pixel_count(); ++p)
      out.pixels[p * ch + c] = static_cast<uint8_t>(std::lround(std::clamp(up[p], 0.0, 255.0)));
  }
  return out;
}

ImageU8 apply_noise(const ImageU8& image, const NoiseSpec& spec) {
  spec.validate();
  if (spec.case_id == 1) return noise_case1(image, spec.brightness_delta, spec.kernel_size);
  return noise_case2(image, spec.kernel_size, spec.scale);
}

}  // namespace crackseg
