#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crackseg {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;

  int64_t pixel_count() const { return static_cast<int64_t>(width) * height; }
};

ImageU8 load_png(const std::string& path, int force_channels);  // 1 or 3
void save_png(const std::string& path, const ImageU8& image);

/// Bilinear resize of an 8-bit image (half-pixel centers, rounded back to
/// integer levels).
ImageU8 resize_bilinear_u8(const ImageU8& src, int width, int height);

/// Nearest-neighbor resize; used for masks so binarity is preserved.
ImageU8 resize_nearest_u8(const ImageU8& src, int width, int height);

}  // namespace crackseg
