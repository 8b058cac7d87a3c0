#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

enum class ParamGroup { Backbone, Head, Delta };

enum class Init { Zeros, Ones, TruncNormal, Normal };

struct ParamEntry {
  std::string name;
  TensorPtr value;
  ParamGroup group;
  bool decay;  // weight decay applies (2-D and higher; biases/gains exempt)
};

enum class CountFilter { All, Tunable, DeltaOnly };

/// Named parameter store for one model. The registry is the single source of
/// truth for parameter names, shapes, groups and initialization, so parameter
/// counting can run without materializing data (`materialize = false`), which
/// keeps `count-params` cheap even at ViT-H scale.
///
/// Backbone parameters are frozen (tunable = false); head and delta
/// parameters train. Initialization draws from one sequential stream in
/// registration order, so a given seed always produces the same weights.
class ParamRegistry {
 public:
  ParamRegistry(bool materialize, uint64_t seed) : materialize_(materialize), rng_(seed) {}

  TensorPtr add(std::string name, Shape shape, ParamGroup group, Init init, float sigma = 0.02f);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  bool materialized() const { return materialize_; }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }
  const ParamEntry& at(std::string_view name) const;

  int64_t count(CountFilter filter) const;

  /// Names of all tunable parameters, in registration order.
  std::vector<std::string> tunable_names() const;

 private:
  bool materialize_;
  Rng rng_;
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace crackseg
