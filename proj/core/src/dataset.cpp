#include "crackseg/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "crackseg/errors.hpp"
#include "crackseg/image.hpp"

namespace fs = std::filesystem;

namespace crackseg {

TensorPtr SampleRecord::image_tensor() const {
  return make_tensor({3, height, width}, image);
}

TensorPtr SampleRecord::mask_tensor() const {
  std::vector<float> values(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) values[i] = mask[i];
  return make_tensor({height, width}, std::move(values));
}

SampleRecord decode_sample(const std::string& image_path, const std::string& mask_path,
                           const std::string& id, int target_size) {
  ImageU8 rgb = resize_bilinear_u8(load_png(image_path, 3), target_size, target_size);
  SampleRecord rec;
  rec.id = id;
  rec.height = target_size;
  rec.width = target_size;
  rec.image_path = image_path;
  rec.mask_path = mask_path;
  const int64_t pixels = static_cast<int64_t>(target_size) * target_size;
  rec.image.resize(3 * pixels);
  for (int64_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c)
      rec.image[c * pixels + p] = static_cast<float>(rgb.pixels[p * 3 + c]) / 255.0f;
  if (!mask_path.empty()) {
    ImageU8 gray = resize_nearest_u8(load_png(mask_path, 1), target_size, target_size);
    rec.mask.resize(pixels);
    for (int64_t p = 0; p < pixels; ++p) rec.mask[p] = gray.pixels[p] > 127 ? 1 : 0;
  } else {
    rec.mask.assign(pixels, 0);
  }
  return rec;
}

std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest) {
  const fs::path images_dir = fs::path(manifest.root) / manifest.split / "images";
  const fs::path masks_dir = fs::path(manifest.root) / manifest.split / "masks";
  if (!fs::is_directory(images_dir))
    throw IoError("dataset images directory missing: " + images_dir.string());

  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());

  std::vector<SampleRecord> records;
  records.reserve(stems.size());
  for (const std::string& stem : stems) {
    const fs::path image_path = images_dir / (stem + ".png");
    const fs::path mask_path = masks_dir / (stem + ".png");
    if (!fs::is_regular_file(mask_path))
      throw IoError("no mask for image stem '" + stem + "' under " + masks_dir.string());
    records.push_back(
        decode_sample(image_path.string(), mask_path.string(), stem, manifest.target_size));
  }
  return records;
}

}  // namespace crackseg
