#include "crackseg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "crackseg/errors.hpp"
#include "crackseg/kernels.hpp"

namespace crackseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 load_png(const std::string& path, int force_channels) {
  if (force_channels != 1 && force_channels != 3)
    throw ContractError("load_png: force_channels must be 1 or 3");
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (force_channels == 3)
    png_set_gray_to_rgb(png);
  else
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  png_read_update_info(png, info);

  ImageU8 out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = force_channels;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void save_png(const std::string& path, const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ContractError("save_png: only 1- or 3-channel images");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[y] = const_cast<png_bytep>(image.pixels.data()) +
              static_cast<std::size_t>(y) * image.width * image.channels;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 resize_bilinear_u8(const ImageU8& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  ImageU8 out{width, height, src.channels, {}};
  out.pixels.resize(static_cast<std::size_t>(width) * height * src.channels);
  // deinterleave per channel so resize_plane can run on contiguous planes
  std::vector<double> plane(static_cast<std::size_t>(src.width) * src.height);
  std::vector<double> scaled(static_cast<std::size_t>(width) * height);
  for (int c = 0; c < src.channels; ++c) {
    for (int64_t p = 0; p < src.pixel_count(); ++p)
      plane[p] = src.pixels[p * src.channels + c];
    detail::resize_plane(plane.data(), src.height, src.width, scaled.data(), height, width, false);
    for (int64_t p = 0; p < out.pixel_count(); ++p)
      out.pixels[p * src.channels + c] =
          static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, scaled[p]))));
  }
  return out;
}

ImageU8 resize_nearest_u8(const ImageU8& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  ImageU8 out{width, height, src.channels, {}};
  out.pixels.resize(static_cast<std::size_t>(width) * height * src.channels);
  for (int y = 0; y < height; ++y) {
    int sy = std::min(src.height - 1,
                      static_cast<int>(std::floor((y + 0.5) * src.height / height)));
    for (int x = 0; x < width; ++x) {
      int sx = std::min(src.width - 1,
                        static_cast<int>(std::floor((x + 0.5) * src.width / width)));
      for (int c = 0; c < src.channels; ++c)
        out.pixels[(static_cast<std::size_t>(y) * width + x) * src.channels + c] =
            src.pixels[(static_cast<std::size_t>(sy) * src.width + sx) * src.channels + c];
    }
  }
  return out;
}

}  // namespace crackseg
