#include "crackseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crackseg/ops.hpp"

namespace crackseg {

namespace {
constexpr double kAdamEps = 1e-8;
}

void TrainConfig::validate() const {
  if (lambda_ce < 0.0 || lambda_ce > 1.0) throw ConfigError("lambda_ce must be in [0,1]");
  if (lr0 <= 0.0 || warmup_iters < 0 || power < 1 || epochs < 1 || batch_size < 1)
    throw ConfigError("train config fields must be positive");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw ConfigError("adam betas must lie in (0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

TensorPtr combined_loss(Tape& tape, const TensorPtr& prob, const TensorPtr& target,
                        float lambda_ce) {
  auto ce = ops::cross_entropy(tape, prob, target);
  auto dice = ops::dice_loss(tape, prob, target);
  return ops::add(tape, ops::scale(tape, ce, lambda_ce), ops::scale(tape, dice, 1.0f - lambda_ce));
}

double lr_schedule(int iter, const TrainConfig& cfg, int max_iter) {
  if (iter < cfg.warmup_iters)
    return cfg.lr0 * iter / static_cast<double>(cfg.warmup_iters);
  if (max_iter <= 0) return cfg.lr0;
  const double progress = std::min(1.0, (iter - cfg.warmup_iters) / static_cast<double>(max_iter));
  return cfg.lr0 * std::pow(1.0 - progress, cfg.power);
}

void AdamW::step(ParamRegistry& params, double lr) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
  for (const auto& entry : params.entries()) {
    Tensor& p = *entry.value;
    if (!p.tunable) continue;
    auto& mom = moments_[entry.name];
    if (mom.m.empty()) {
      mom.m.assign(p.data.size(), 0.0f);
      mom.v.assign(p.data.size(), 0.0f);
    }
    const bool has_grad = p.has_grad();
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      mom.m[i] = static_cast<float>(cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g);
      mom.v[i] = static_cast<float>(cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g);
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      double value = p.data[i];
      if (entry.decay) value -= lr * cfg_.weight_decay * value;
      value -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
      p.data[i] = static_cast<float>(value);
    }
  }
}

SampleRecord augment(const SampleRecord& sample, Rng& rng) {
  const int quarter_turns = static_cast<int>(rng.uniform_int(4));
  const bool flip_h = rng.bernoulli(0.5);
  const bool flip_v = rng.bernoulli(0.5);
  const int h = sample.height, w = sample.width;
  if (h != w && quarter_turns % 2 == 1)
    throw ContractError("augment: 90-degree rotation requires square samples");

  SampleRecord out = sample;
  auto map_index = [&](int y, int x) {
    // inverse transform: output (y,x) pulls from source coordinates
    int sy = y, sx = x;
    if (flip_v) sy = h - 1 - sy;
    if (flip_h) sx = w - 1 - sx;
    for (int k = 0; k < quarter_turns; ++k) {
      // rotate 90 degrees clockwise each turn
      const int ny = w - 1 - sx;
      const int nx = sy;
      sy = ny;
      sx = nx;
    }
    return static_cast<int64_t>(sy) * w + sx;
  };
  const int64_t pixels = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int64_t dst = static_cast<int64_t>(y) * w + x;
      const int64_t src = map_index(y, x);
      for (int c = 0; c < 3; ++c) out.image[c * pixels + dst] = sample.image[c * pixels + src];
      out.mask[dst] = sample.mask[src];
    }
  return out;
}

Checkpoint snapshot_tunable(const Model& model, int epoch, double val_f1) {
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.val_f1 = val_f1;
  for (const auto& entry : model.params->entries())
    if (entry.value->tunable) ckpt.tunable_values.emplace_back(entry.name, entry.value->data);
  return ckpt;
}

void restore_tunable(Model& model, const Checkpoint& ckpt) {
  for (const auto& [name, values] : ckpt.tunable_values) {
    const ParamEntry& entry = model.params->at(name);
    if (entry.value->data.size() != values.size())
      throw ContractError("checkpoint size mismatch for " + name);
    entry.value->data = values;
  }
}

TrainResult train_loop(Model& model, const std::vector<SampleRecord>& train_set,
                       const std::vector<SampleRecord>& val_set, const TrainConfig& cfg,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (model.params->count(CountFilter::Tunable) == 0)
    throw ContractError("train_loop: model has no tunable parameters");
  if (train_set.empty() || val_set.empty())
    throw ContractError("train_loop: train and validation sets must be nonempty");

  const int batches_per_epoch =
      static_cast<int>((train_set.size() + cfg.batch_size - 1) / cfg.batch_size);
  const int total_iters = cfg.epochs * batches_per_epoch;
  const int max_iter = std::max(1, total_iters - cfg.warmup_iters);

  AdamW opt(cfg);
  TrainResult result;
  int iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::fork(cfg.seed, 0x0de7, epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    double loss_sum = 0.0;
    int64_t loss_count = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      lr = lr_schedule(iter, cfg, max_iter);
      for (std::size_t b = start; b < end; ++b) {
        Rng aug_rng = Rng::fork(cfg.seed, 0xa061 + epoch, order[b]);
        SampleRecord sample = augment(train_set[order[b]], aug_rng);
        Tape tape;
        auto logits = model_forward(tape, model, sample.image_tensor());
        auto prob = crack_probability(tape, logits);
        auto loss = combined_loss(tape, prob, sample.mask_tensor(),
                                  static_cast<float>(cfg.lambda_ce));
        const double loss_value = loss->data[0];
        if (!std::isfinite(loss_value))
          throw NumericError("train_loop: non-finite loss at epoch " + std::to_string(epoch) +
                             ", iteration " + std::to_string(iter) + ", sample " + sample.id);
        loss_sum += loss_value;
        ++loss_count;
        // scale so accumulated gradients average over the batch
        auto scaled = ops::scale(tape, loss, inv_batch);
        tape.backward(scaled);
      }
      opt.step(*model.params, lr);
      for (const auto& entry : model.params->entries()) entry.value->clear_grad();
      ++iter;
    }

    MetricReport val = evaluate_dataset(model, val_set, std::nullopt, Granularity::Micro);
    EpochLog row{epoch, loss_sum / static_cast<double>(loss_count), val.precision,
                 val.recall, val.f1, val.iou, lr};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (result.best.epoch < 0 || val.f1 > result.best.val_f1)
      result.best = snapshot_tunable(model, epoch, val.f1);
  }
  return result;
}

std::string epoch_log_header() {
  return "epoch,mean_train_loss,val_precision,val_recall,val_f1,val_iou,lr";
}

std::string epoch_log_line(const EpochLog& row) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.8g", row.epoch,
                row.mean_train_loss, row.val_precision, row.val_recall, row.val_f1, row.val_iou,
                row.lr);
  return std::string(buf);
}

}  // namespace crackseg
