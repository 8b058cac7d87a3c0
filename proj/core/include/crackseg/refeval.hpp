#pragma once

#include "crackseg/model.hpp"

namespace crackseg {

/// Forward-only double-precision evaluation of the combined CE+Dice loss.
/// Reads the model's float32 weights directly and mirrors model_forward
/// step for step, but never touches the tape or any backward code, so it
/// serves as the independent oracle for finite-difference gradient checks.
double ref_model_loss(const Model& model, const float* image, const float* target,
                      float lambda_ce);

}  // namespace crackseg
