#include "crackseg/params.hpp"

#include "crackseg/errors.hpp"

namespace crackseg {

TensorPtr ParamRegistry::add(std::string name, Shape shape, ParamGroup group, Init init,
                             float sigma) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  TensorPtr value;
  if (materialize_) {
    value = make_tensor(shape);
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(value->data.begin(), value->data.end(), 1.0f);
        break;
      case Init::TruncNormal:
        for (float& v : value->data) v = static_cast<float>(rng_.truncated_normal() * sigma);
        break;
      case Init::Normal:
        for (float& v : value->data) v = static_cast<float>(rng_.normal() * sigma);
        break;
    }
  } else {
    // dry registry: shapes only, no payload
    value = std::make_shared<Tensor>();
    value->shape = std::move(shape);
  }
  value->tunable = group != ParamGroup::Backbone;
  const bool decay = value->shape.size() >= 2;
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), value, group, decay});
  return entries_.back().value;
}

const ParamEntry& ParamRegistry::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return entries_[it->second];
}

int64_t ParamRegistry::count(CountFilter filter) const {
  int64_t total = 0;
  for (const auto& e : entries_) {
    const bool match = filter == CountFilter::All ||
                       (filter == CountFilter::Tunable && e.value->tunable) ||
                       (filter == CountFilter::DeltaOnly && e.group == ParamGroup::Delta);
    if (match) total += shape_numel(e.value->shape);
  }
  return total;
}

std::vector<std::string> ParamRegistry::tunable_names() const {
  std::vector<std::string> names;
  for (const auto& e : entries_)
    if (e.value->tunable) names.push_back(e.name);
  return names;
}

}  // namespace crackseg
