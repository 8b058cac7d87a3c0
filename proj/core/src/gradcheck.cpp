#include "crackseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "crackseg/ops.hpp"
#include "crackseg/refeval.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

GradCheckResult gradcheck_model(Model& model, const std::vector<float>& image,
                                const std::vector<float>& target, const GradCheckOptions& opts) {
  const int img = model.cfg.encoder.image_size;
  if (static_cast<int64_t>(image.size()) != 3LL * img * img ||
      static_cast<int64_t>(target.size()) != static_cast<int64_t>(img) * img)
    throw ContractError("gradcheck_model: sample does not match the model image size");

  Rng rng(opts.seed);
  for (const auto& e : model.params->entries()) {
    if (!e.value->tunable) continue;
    e.value->clear_grad();
    if (opts.jitter_sigma > 0.0)
      for (float& v : e.value->data)
        v += static_cast<float>(rng.normal() * opts.jitter_sigma);
  }

  auto image_t = make_tensor({3, img, img}, image);
  auto target_t = make_tensor({img, img}, target);
  Tape tape;
  auto logits = model_forward(tape, model, image_t);
  auto prob = crack_probability(tape, logits);
  auto ce = ops::cross_entropy(tape, prob, target_t);
  auto dice = ops::dice_loss(tape, prob, target_t);
  auto loss = ops::add(tape, ops::scale(tape, ce, opts.lambda_ce),
                       ops::scale(tape, dice, 1.0f - opts.lambda_ce));
  tape.backward(loss);

  GradCheckResult result;
  for (const auto& e : model.params->entries()) {
    if (!e.value->tunable) continue;
    Tensor& tensor = *e.value;
    const int64_t n = tensor.numel();
    const int k = static_cast<int>(std::min<int64_t>(opts.samples_per_tensor, n));
    for (int s = 0; s < k; ++s) {
      const int64_t i = k == n ? s : static_cast<int64_t>(rng.uniform_int(n));
      const float saved = tensor.data[i];
      const float plus = static_cast<float>(saved + opts.step);
      const float minus = static_cast<float>(saved - opts.step);
      tensor.data[i] = plus;
      const double lp = ref_model_loss(model, image.data(), target.data(), opts.lambda_ce);
      tensor.data[i] = minus;
      const double lm = ref_model_loss(model, image.data(), target.data(), opts.lambda_ce);
      tensor.data[i] = saved;
      const double fd = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double analytic = tensor.has_grad() ? tensor.grad[i] : 0.0;
      if (std::fabs(analytic) < opts.grad_floor && std::fabs(fd) < opts.grad_floor) {
        ++result.skipped_small;
        continue;
      }
      const double rel = std::fabs(analytic - fd) / std::max(std::fabs(analytic), std::fabs(fd));
      ++result.checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = e.name + "[" + std::to_string(i) + "]";
        result.worst_analytic = analytic;
        result.worst_fd = fd;
      }
    }
  }
  return result;
}

}  // namespace crackseg
