#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crackseg/errors.hpp"

namespace crackseg {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense float32 array with an optional gradient slot.
///
/// `tunable` doubles as the requires-grad flag: leaf parameters are tunable
/// when they may be trained, and every op output is marked tunable iff any
/// of its inputs is, so gradient flows exactly through live paths. Frozen
/// values (tunable == false) never receive gradient accumulation.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool tunable = false;

  Tensor() = default;
  Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  /// Size of the last dimension.
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  /// Product of all but the last dimension.
  int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void clear_grad() { grad.clear(); }

  /// Adds g into the gradient slot unless this value is frozen.
  void accumulate_grad(std::span<const float> g);
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape s, float fill = 0.0f);
TensorPtr make_tensor(Shape s, std::vector<float> values);

/// Record of executed primitive operations for reverse-mode differentiation.
///
/// Each training step owns exactly one tape; tapes are never shared between
/// threads. A non-recording tape turns every op into plain forward
/// evaluation (inference mode).
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }

  void record(const char* op, std::function<void()> backward) {
    if (recording_) entries_.push_back({op, std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backward, visiting each
  /// recorded op exactly once in reverse execution order. `scalar_loss` must
  /// hold a single element.
  void backward(const TensorPtr& scalar_loss);

  /// General reverse sweep from an arbitrary output with a caller-provided
  /// output gradient. Used by gradient tests.
  void backward_seeded(const TensorPtr& output, std::span<const float> seed);

 private:
  struct Entry {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
};

}  // namespace crackseg
