#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crackseg/dataset.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

struct TrainConfig {
  double lr0 = 4e-4;
  int warmup_iters = 300;
  int power = 6;
  int epochs = 140;
  int batch_size = 8;
  double lambda_ce = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double binarize = 0.5;
  uint64_t seed = 1;

  void validate() const;
};

/// lambda * CE + (1 - lambda) * Dice.
TensorPtr combined_loss(Tape& tape, const TensorPtr& prob, const TensorPtr& target,
                        float lambda_ce);

/// Linear warm-up to lr0, then lr0 * (1 - (iter - warmup)/max_iter)^power,
/// floored at zero. max_iter counts post-warmup iterations.
double lr_schedule(int iter, const TrainConfig& cfg, int max_iter);

/// Adam with decoupled weight decay. Moments exist only for tunable
/// parameters; decay skips 1-D parameters (biases and norm gains/biases).
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ParamRegistry& params, double lr);
  int iterations() const { return step_count_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  TrainConfig cfg_;
  std::unordered_map<std::string, Moments> moments_;
  int step_count_ = 0;
};

/// Rotation by k*90 degrees plus independent horizontal/vertical flips,
/// applied identically to image and mask.
SampleRecord augment(const SampleRecord& sample, Rng& rng);

struct Checkpoint {
  std::vector<std::pair<std::string, std::vector<float>>> tunable_values;
  int epoch = -1;
  double val_f1 = 0.0;
};

struct EpochLog {
  int epoch;
  double mean_train_loss;
  double val_precision, val_recall, val_f1, val_iou;
  double lr;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
};

Checkpoint snapshot_tunable(const Model& model, int epoch, double val_f1);
void restore_tunable(Model& model, const Checkpoint& ckpt);

/// Full training loop: augment, forward, combined loss, backward, AdamW with
/// the scheduled learning rate; per-epoch validation; keeps the best-F1
/// checkpoint. Aborts with NumericError on a NaN loss. `on_epoch` (optional)
/// receives each completed EpochLog row.
TrainResult train_loop(Model& model, const std::vector<SampleRecord>& train_set,
                       const std::vector<SampleRecord>& val_set, const TrainConfig& cfg,
                       const std::function<void(const EpochLog&)>& on_epoch = nullptr);

std::string epoch_log_header();
std::string epoch_log_line(const EpochLog& row);

}  // namespace crackseg
