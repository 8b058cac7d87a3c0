#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// One image/mask pair ready for the model. The image holds quantized levels
/// (k/255) so the integer representation needed by the corruption pipelines
/// is recoverable exactly.
struct SampleRecord {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> image;   // (3,H,W), values in [0,1]
  std::vector<uint8_t> mask;  // (H,W), values in {0,1}
  std::string image_path;
  std::string mask_path;

  TensorPtr image_tensor() const;
  TensorPtr mask_tensor() const;  // float {0,1}, constant
};

struct DatasetManifest {
  std::string root;
  std::string split;  // train | val | test
  int target_size = 448;
};

/// Loads `<root>/<split>/images/*.png` with matching `<root>/<split>/masks`.
/// Images decode as RGB and resize bilinearly; masks decode as grayscale,
/// resize nearest-neighbor and binarize at level > 127. Samples are ordered
/// lexicographically by stem.
std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest);

/// In-memory variant of a single decoded pair (shared by load_dataset and the
/// CLI infer path).
SampleRecord decode_sample(const std::string& image_path, const std::string& mask_path,
                           const std::string& id, int target_size);

}  // namespace crackseg
