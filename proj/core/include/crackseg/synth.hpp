#pragma once

#include <string>

#include "crackseg/dataset.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

/// Deterministic synthetic crack sample: textured background plus dark
/// random-walk polyline cracks with an exact rasterized mask. Every tenth
/// sample (index % 10 == 9) is crack-free. Fully determined by (seed, index,
/// size).
SampleRecord synth_sample(uint64_t seed, int index, int size);

/// Writes n samples as `<out_dir>/images/*.png` + `<out_dir>/masks/*.png`.
void synth_generate(int n, int size, uint64_t seed, const std::string& out_dir);

}  // namespace crackseg
