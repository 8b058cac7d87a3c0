#pragma once

#include <map>
#include <string>
#include <vector>

#include "crackseg/model.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Named-tensor archive: a human-readable text header (meta lines plus one
/// line per tensor with name, dtype, shape and blob offsets) followed by a
/// raw little-endian float32 payload. Round trips are bitwise exact.
struct Archive {
  std::map<std::string, std::string> meta;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };
  std::vector<Entry> tensors;
};

void save_archive(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  const std::map<std::string, std::string>& meta);

Archive load_archive(const std::string& path);

enum class SaveSet { Full, TunableOnly };

/// Writes the model (or only its tunable delta+head subset) with the run
/// configuration embedded as meta, so a checkpoint is self-describing.
void save_model_archive(const Model& model, const std::string& path, SaveSet set,
                        const std::map<std::string, std::string>& meta);

/// Overlays archive tensors onto an existing model. Archive names must form
/// a subset of the model's parameters; anything not in the archive is left
/// untouched.
void load_model_archive(const std::string& path, Model& model);

}  // namespace crackseg
