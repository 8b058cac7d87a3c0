#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/image.hpp"

namespace crackseg {

/// Artificial corruption settings. Case 1 darkens the V channel and blurs;
/// case 2 blurs heavily and round-trips through an s-fold downsample.
struct NoiseSpec {
  int case_id = 1;
  int brightness_delta = 50;
  int kernel_size = 9;
  int scale = 2;

  static NoiseSpec case1() { return NoiseSpec{1, 50, 9, 2}; }
  static NoiseSpec case2() { return NoiseSpec{2, 50, 21, 2}; }
  void validate() const;
};

struct Hsv {
  double h;  // [0, 360)
  double s;  // [0, 255]
  double v;  // [0, 255]
};

Hsv rgb_to_hsv(uint8_t r, uint8_t g, uint8_t b);
void hsv_to_rgb(const Hsv& hsv, uint8_t& r, uint8_t& g, uint8_t& b);

/// (k,k) Gaussian, sigma = 0.3*((k-1)/2 - 1) + 0.8, entries sum to 1.
std::vector<double> gaussian_kernel(int k);

/// Separable Gaussian blur with edge-replicate padding; one rounding step at
/// the end.
ImageU8 gaussian_blur(const ImageU8& image, int k);

ImageU8 noise_case1(const ImageU8& image, int brightness_delta = 50, int k = 9);
ImageU8 noise_case2(const ImageU8& image, int k = 21, int scale = 2);
ImageU8 apply_noise(const ImageU8& image, const NoiseSpec& spec);

}  // namespace crackseg
