#include "crackseg/kernels.hpp"

#include "crackseg/errors.hpp"

namespace crackseg::detail {

std::vector<double> gaussian_taps_1d(int k) {
  if (k < 1 || k % 2 == 0)
    throw crackseg::ConfigError("gaussian kernel size must be odd and >= 1, got " +
                                std::to_string(k));
  const int r = (k - 1) / 2;
  const double sigma = 0.3 * (r - 1) + 0.8;
  std::vector<double> taps(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

}  // namespace crackseg::detail
