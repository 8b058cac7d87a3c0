#include "crackseg/tensor.hpp"

#include <sstream>

namespace crackseg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape s, float fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("value count " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

void Tensor::accumulate_grad(std::span<const float> g) {
  if (!tunable) return;
  if (g.size() != data.size())
    throw ShapeError("gradient length mismatch for shape " + shape_str(shape));
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

TensorPtr make_tensor(Shape s, float fill) { return std::make_shared<Tensor>(std::move(s), fill); }

TensorPtr make_tensor(Shape s, std::vector<float> values) {
  return std::make_shared<Tensor>(std::move(s), std::move(values));
}

void Tape::backward(const TensorPtr& scalar_loss) {
  if (scalar_loss->numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(scalar_loss->shape));
  if (entries_.empty()) throw ContractError("backward on an empty tape");
  const float one = 1.0f;
  backward_seeded(scalar_loss, std::span<const float>(&one, 1));
}

void Tape::backward_seeded(const TensorPtr& output, std::span<const float> seed) {
  if (static_cast<int64_t>(seed.size()) != output->numel())
    throw ContractError("backward seed length does not match output");
  output->ensure_grad();
  for (std::size_t i = 0; i < seed.size(); ++i) output->grad[i] += seed[i];
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
}

}  // namespace crackseg
