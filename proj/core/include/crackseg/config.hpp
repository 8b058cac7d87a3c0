#pragma once

#include <map>
#include <string>

#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/train.hpp"

namespace crackseg {

/// Flat dotted-key configuration, `key = value` per line, '#' comments.
using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_config_text(const std::string& text);
FlatConfig load_config_file(const std::string& path);
std::string serialize_config(const FlatConfig& config);

/// A complete declarative description of a run. A RunConfig plus its seed
/// fully determines weights, shuffling, augmentation and therefore outputs.
struct RunConfig {
  std::string preset = "vit-toy";  // vit-b | vit-l | vit-h | vit-toy
  int image_size = 0;              // 0 keeps the preset default
  DeltaSpec delta;
  TrainConfig train;
  std::string data_root;
  std::string out_dir = "run_out";
  Granularity granularity = Granularity::Micro;
  uint64_t seed = 1;

  static RunConfig from_flat(const FlatConfig& flat);
  static RunConfig from_file(const std::string& path);
  FlatConfig to_flat() const;

  EncoderConfig encoder_config() const;
  ModelConfig model_config() const;
};

}  // namespace crackseg
