#pragma once

#include <string>
#include <vector>

#include "crackseg/model.hpp"

namespace crackseg {

struct GradCheckOptions {
  int samples_per_tensor = 4;   // coordinates probed per tunable tensor
  double step = 1e-3;           // central-difference step
  double rel_tol = 1e-3;
  double grad_floor = 1e-6;     // pairs below this on both sides are skipped
  double jitter_sigma = 0.02;   // applied to tunables so zero-initialized
                                // deltas do not hide gradient paths
  uint64_t seed = 99;
  float lambda_ce = 0.2f;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  int64_t checked = 0;
  int64_t skipped_small = 0;

  bool passed(double tol) const { return checked > 0 && max_rel_err < tol; }
};

/// Compares tape-computed gradients of the combined loss against central
/// finite differences evaluated with the double-precision reference forward.
/// Probes a seeded sample of coordinates in every tunable tensor.
GradCheckResult gradcheck_model(Model& model, const std::vector<float>& image,
                                const std::vector<float>& target, const GradCheckOptions& opts);

}  // namespace crackseg
