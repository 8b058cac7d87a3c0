#include "crackseg/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "crackseg/errors.hpp"
#include "crackseg/image.hpp"
#include "crackseg/kernels.hpp"

namespace fs = std::filesystem;

namespace crackseg {

namespace {

// Generator constants (only seed/n/size are exposed through the CLI):
//   background luminance U(0.55, 0.85), per-channel tint U(-0.04, 0.04)
//   low-frequency texture: 9x9 node grid, offsets U(-0.09, 0.09)
//   grain per pixel U(-0.03, 0.03)
//   cracks per image: 1..3, width 1..5 px, length U(0.6, 1.4)*size steps
//   heading drift per step U(-0.35, 0.35), crack darkness factor U(0.30, 0.55)
//   positive pixels capped at 9% of the image
constexpr int kTextureNodes = 9;
constexpr double kPositiveCap = 0.09;

}  // namespace

SampleRecord synth_sample(uint64_t seed, int index, int size) {
  Rng rng = Rng::fork(seed, 0x5eed5a11, static_cast<uint64_t>(index));
  const int64_t pixels = static_cast<int64_t>(size) * size;

  const double lum = rng.uniform(0.55, 0.85);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.04, 0.04);

  std::vector<double> nodes(kTextureNodes * kTextureNodes);
  for (double& v : nodes) v = rng.uniform(-0.09, 0.09);
  std::vector<double> texture(pixels);
  detail::resize_plane(nodes.data(), kTextureNodes, kTextureNodes, texture.data(), size, size,
                       false);

  std::vector<double> base(pixels);
  for (int64_t p = 0; p < pixels; ++p)
    base[p] = lum + texture[p] + rng.uniform(-0.03, 0.03);

  std::vector<uint8_t> mask(pixels, 0);
  std::vector<double> darkness(pixels, 1.0);
  const bool crack_free = index % 10 == 9;
  if (!crack_free) {
    const int64_t budget = static_cast<int64_t>(kPositiveCap * pixels);
    int64_t positives = 0;
    const int crack_count = 1 + static_cast<int>(rng.uniform_int(3));
    for (int k = 0; k < crack_count && positives < budget; ++k) {
      const int width = 1 + static_cast<int>(rng.uniform_int(5));
      const int lo = (width - 1) / 2, hi = width / 2;
      double x = rng.uniform(0.1, 0.9) * size;
      double y = rng.uniform(0.1, 0.9) * size;
      double heading = rng.uniform(0.0, 6.283185307179586);
      const int steps = static_cast<int>(rng.uniform(0.6, 1.4) * size);
      const double factor = rng.uniform(0.30, 0.55);
      for (int s = 0; s < steps && positives < budget; ++s) {
        const int cx = static_cast<int>(std::lround(x));
        const int cy = static_cast<int>(std::lround(y));
        for (int dy = -lo; dy <= hi; ++dy)
          for (int dx = -lo; dx <= hi; ++dx) {
            const int px = cx + dx, py = cy + dy;
            if (px < 0 || px >= size || py < 0 || py >= size) continue;
            const int64_t p = static_cast<int64_t>(py) * size + px;
            if (!mask[p]) {
              mask[p] = 1;
              darkness[p] = factor;
              ++positives;
            }
          }
        heading += rng.uniform(-0.35, 0.35);
        x += std::cos(heading);
        y += std::sin(heading);
        if (x < 1 || x >= size - 1 || y < 1 || y >= size - 1) break;
      }
    }
  }

  SampleRecord rec;
  rec.id = "synth_" + std::string(5 - std::min<std::size_t>(5, std::to_string(index).size()), '0') +
           std::to_string(index);
  rec.height = size;
  rec.width = size;
  rec.mask = mask;
  rec.image.resize(3 * pixels);
  for (int c = 0; c < 3; ++c)
    for (int64_t p = 0; p < pixels; ++p) {
      const double v = std::clamp((base[p] + tint[c]) * darkness[p], 0.0, 1.0);
      const uint8_t level = static_cast<uint8_t>(std::lround(v * 255.0));
      rec.image[c * pixels + p] = static_cast<float>(level) / 255.0f;
    }
  return rec;
}

void synth_generate(int n, int size, uint64_t seed, const std::string& out_dir) {
  if (n < 1) throw ConfigError("synth_generate: n must be >= 1");
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (int i = 0; i < n; ++i) {
    SampleRecord rec = synth_sample(seed, i, size);
    const int64_t pixels = static_cast<int64_t>(size) * size;
    ImageU8 rgb{size, size, 3, std::vector<uint8_t>(static_cast<std::size_t>(3) * pixels)};
    for (int64_t p = 0; p < pixels; ++p)
      for (int c = 0; c < 3; ++c)
        rgb.pixels[p * 3 + c] =
            static_cast<uint8_t>(std::lround(rec.image[c * pixels + p] * 255.0f));
    ImageU8 gray{size, size, 1, std::vector<uint8_t>(static_cast<std::size_t>(pixels))};
    for (int64_t p = 0; p < pixels; ++p) gray.pixels[p] = rec.mask[p] ? 255 : 0;
    save_png((root / "images" / (rec.id + ".png")).string(), rgb);
    save_png((root / "masks" / (rec.id + ".png")).string(), gray);
  }
}

}  // namespace crackseg
