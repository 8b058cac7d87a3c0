// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <vector>

#include "cli.hpp"
#include "crackseg/archive.hpp"
#include "crackseg/encoder.hpp"
#include "crackseg/gradcheck.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/noise.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/synth.hpp"
#include "crackseg/train.hpp"

using namespace crackseg;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw Failure(message);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ModelConfig toy_config(DeltaSpec delta, uint64_t seed) {
  ModelConfig mc;
  mc.encoder = EncoderConfig::vit_toy();
  mc.delta = std::move(delta);
  mc.init_seed = seed;
  return mc;
}

std::vector<float> forward_once(const Model& model, const TensorPtr& image) {
  Tape tape = Tape::inference();
  return model_forward(tape, model, image)->data;
}

TensorPtr random_image(uint64_t seed, int size) {
  Rng rng(seed);
  auto img = make_tensor({3, size, size});
  for (float& v : img->data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return img;
}

// shared between the training criterion and the corruption criterion
struct TrainedState {
  Model model;
  std::vector<SampleRecord> test_set;
  double clean_iou = 0.0;
};
std::optional<TrainedState> g_trained;

// ---------------------------------------------------------------------------

void criterion_gradient_suite() {
  DeltaSpec delta;
  delta.adapter = AdapterConfig{};  // m=32, s=0.2, both placements
  delta.lora = LoRAConfig{};        // r=4 on {q,v}
  Model model = build_model(toy_config(delta, 1001));
  SampleRecord sample = synth_sample(2024, 0, 64);
  std::vector<float> target(sample.mask.begin(), sample.mask.end());
  GradCheckOptions opts;
  opts.samples_per_tensor = 3;
  opts.step = 1e-3;
  opts.rel_tol = 1e-3;
  opts.grad_floor = 1e-6;
  opts.seed = 4242;
  GradCheckResult result = gradcheck_model(model, sample.image, target, opts);
  require(result.checked > 0, "no coordinates were checked");
  require(result.max_rel_err < 1e-3,
          "max relative error " + fmt(result.max_rel_err) + " at " + result.worst_param);
  std::cout << "    max rel err " << fmt(result.max_rel_err) << " over " << result.checked
            << " coordinates (" << result.skipped_small << " below 1e-6 skipped)\n";
}

void criterion_lora_identity() {
  Model base = build_model(toy_config(DeltaSpec{}, 1002));
  DeltaSpec delta;
  delta.lora = LoRAConfig{};
  Model adapted = build_model(toy_config(delta, 1002));
  auto image = random_image(7, 64);
  const auto a = forward_once(base, image);
  const auto b = forward_once(adapted, image);
  require(a == b, "forward outputs differ bitwise after LoRA attach");
}

void criterion_merge_equivalence() {
  for (int rank : {1, 2, 4}) {
    DeltaSpec delta;
    delta.lora = LoRAConfig{rank, true, false, true, false};
    Model model = build_model(toy_config(delta, 1003 + rank));
    Rng rng(555 + rank);
    for (const auto& e : model.params->entries())
      if (e.group == ParamGroup::Delta)
        for (float& v : e.value->data) v = static_cast<float>(rng.uniform(-0.05, 0.05));

    std::vector<std::vector<float>> bypass;
    std::vector<TensorPtr> probes;
    for (int i = 0; i < 100; ++i) probes.push_back(random_image(9000 + i, 64));
    for (const auto& probe : probes) bypass.push_back(forward_once(model, probe));
    merge_lora(model);
    double worst = 0.0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const auto merged = forward_once(model, probes[i]);
      double diff = 0.0, scale = 0.0;
      for (std::size_t k = 0; k < merged.size(); ++k) {
        diff = std::max(diff, static_cast<double>(std::fabs(merged[k] - bypass[i][k])));
        scale = std::max({scale, static_cast<double>(std::fabs(merged[k])),
                          static_cast<double>(std::fabs(bypass[i][k]))});
      }
      worst = std::max(worst, diff / scale);
    }
    require(worst < 1e-5,
            "rank " + std::to_string(rank) + ": relative error " + fmt(worst) + " exceeds 1e-5");
    std::cout << "    rank " << rank << ": worst relative error " << fmt(worst)
              << " over 100 probes\n";
  }
}

void criterion_adapter_identity() {
  Model base = build_model(toy_config(DeltaSpec{}, 1004));
  DeltaSpec delta;
  delta.adapter = AdapterConfig{};
  Model adapted = build_model(toy_config(delta, 1004));

  // compare every block output bitwise, then the end-to-end forward
  Rng rng(17);
  auto grid = make_tensor({4, 4, 64});
  for (float& v : grid->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  TensorPtr a = grid, b = grid;
  Tape tape = Tape::inference();
  for (std::size_t i = 0; i < base.encoder.blocks.size(); ++i) {
    a = vit_block(tape, a, base.encoder.blocks[i], base.cfg.encoder, base.adapter_scaling());
    b = vit_block(tape, b, adapted.encoder.blocks[i], adapted.cfg.encoder,
                  adapted.adapter_scaling());
    require(a->data == b->data,
            "block " + std::to_string(i) + " output changed under zero-init adapters");
  }
  auto image = random_image(11, 64);
  require(forward_once(base, image) == forward_once(adapted, image),
          "full forward changed under zero-init adapters");
}

void criterion_freeze_isolation() {
  DeltaSpec delta;
  delta.lora = LoRAConfig{};
  delta.adapter = AdapterConfig{8, 0.2f, true, true};
  Model model = build_model(toy_config(delta, 1005));
  FreezeMask mask = freeze_mask(model);
  // jitter tunables so every delta path carries gradient
  Rng rng(23);
  for (const auto& e : model.params->entries())
    if (e.value->tunable)
      for (float& v : e.value->data) v += static_cast<float>(rng.uniform(-0.02, 0.02));

  SampleRecord sample = synth_sample(31, 1, 64);
  {
    Tape tape;
    auto prob = crack_probability(tape, model_forward(tape, model, sample.image_tensor()));
    auto loss = combined_loss(tape, prob, sample.mask_tensor(), 0.2f);
    tape.backward(loss);
  }
  std::size_t with_grad = 0;
  for (const auto& e : model.params->entries()) {
    if (e.value->has_grad()) {
      require(mask.contains(e.name), "gradient on frozen parameter " + e.name);
      ++with_grad;
    }
  }
  require(with_grad == mask.tunable.size(),
          "gradient set has " + std::to_string(with_grad) + " parameters, freeze mask lists " +
              std::to_string(mask.tunable.size()));

  std::vector<std::vector<float>> frozen_before;
  for (const auto& e : model.params->entries())
    if (!e.value->tunable) frozen_before.push_back(e.value->data);

  TrainConfig cfg;
  cfg.warmup_iters = 10;
  cfg.seed = 31;
  AdamW opt(cfg);
  for (int step = 0; step < 100; ++step) {
    for (const auto& e : model.params->entries()) e.value->clear_grad();
    Tape tape;
    auto prob = crack_probability(tape, model_forward(tape, model, sample.image_tensor()));
    auto loss = combined_loss(tape, prob, sample.mask_tensor(), 0.2f);
    tape.backward(loss);
    opt.step(*model.params, lr_schedule(step, cfg, 90));
  }
  std::size_t idx = 0;
  for (const auto& e : model.params->entries())
    if (!e.value->tunable) {
      require(e.value->data == frozen_before[idx],
              "frozen parameter " + e.name + " changed during training");
      ++idx;
    }
  std::cout << "    " << with_grad << " tunable parameters received gradients; "
            << idx << " frozen tensors bitwise unchanged after 100 steps\n";
}

void criterion_parameter_counts() {
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.lora = LoRAConfig{1, true, false, true, false};
    Model dry = build_model(mc, /*materialize=*/false);
    const int64_t count = count_parameters(dry, CountFilter::DeltaOnly);
    require(count == 163840, "LoRA r=1 {q,v} delta count " + std::to_string(count));
  }
  int64_t adapter_count = 0, lora4_count = 0;
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.adapter = AdapterConfig{};
    Model dry = build_model(mc, /*materialize=*/false);
    adapter_count = count_parameters(dry, CountFilter::DeltaOnly);
    require(adapter_count == 5326848,
            "adapter m=32 delta count " + std::to_string(adapter_count));
  }
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.lora = LoRAConfig{4, true, false, true, false};
    Model dry = build_model(mc, /*materialize=*/false);
    lora4_count = count_parameters(dry, CountFilter::DeltaOnly);
    require(lora4_count == 655360, "LoRA r=4 {q,v} delta count " + std::to_string(lora4_count));
  }
  const double head_from_adapter = 9.1e6 - static_cast<double>(adapter_count);
  const double head_from_lora = 4.4e6 - static_cast<double>(lora4_count);
  const double gap = std::fabs(head_from_adapter - head_from_lora);
  require(gap < 1.0e5, "head-size estimates differ by " + fmt(gap));
  std::cout << "    delta counts 163840 / 5326848 / 655360; head estimates differ by "
            << fmt(gap) << "\n";
}

void criterion_metric_oracle() {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<uint8_t> pred(256), gt(256);
    for (int i = 0; i < 256; ++i) {
      pred[i] = rng.bernoulli(0.3) ? 1 : 0;
      gt[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    ConfusionCounts c = confusion(pred, gt);
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i = 0; i < 256; ++i) {
      tp += pred[i] && gt[i];
      fp += pred[i] && !gt[i];
      fn += !pred[i] && gt[i];
      tn += !pred[i] && !gt[i];
    }
    require(c.tp == tp && c.fp == fp && c.fn == fn && c.tn == tn,
            "confusion counts diverge from the brute-force loop");
    MetricReport m = metrics(c);
    if (tp + fp > 0) {
      const double pr = static_cast<double>(tp) / (tp + fp);
      require(m.precision == pr, "precision diverges from brute force");
    }
    if (tp + fp + fn > 0)
      require(m.iou == static_cast<double>(tp) / (tp + fp + fn), "iou diverges from brute force");
  }
  MetricReport spot = metrics({6, 2, 2, 6});
  require(spot.precision == 0.75 && spot.recall == 0.75 && std::fabs(spot.f1 - 0.75) < 1e-12 &&
              std::fabs(spot.iou - 0.6) < 1e-12,
          "spot check tp=6 fp=2 fn=2 failed");
}

void criterion_loss_values() {
  Tape tape = Tape::inference();
  {
    auto prob = make_tensor({64, 64}, 0.5f);
    auto gt = make_tensor({64, 64});
    Rng rng(43);
    for (float& v : gt->data) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    auto ce = ops::cross_entropy(tape, prob, gt);
    require(std::fabs(ce->data[0] - std::log(2.0)) < 1e-6,
            "CE at uniform 0.5 is " + fmt(ce->data[0]));
  }
  {
    auto gt = make_tensor({32, 32});
    for (int i = 0; i < 100; ++i) gt->data[i] = 1.0f;
    auto perfect = make_tensor({32, 32}, gt->data);
    auto dice = ops::dice_loss(tape, perfect, gt);
    require(std::fabs(dice->data[0]) < 1e-5, "Dice at perfect prediction is " + fmt(dice->data[0]));
  }
  {
    Rng rng(47);
    auto prob = make_tensor({16, 16});
    for (float& v : prob->data) v = static_cast<float>(rng.uniform(0.05, 0.95));
    auto gt = make_tensor({16, 16});
    for (float& v : gt->data) v = rng.bernoulli(0.25) ? 1.0f : 0.0f;
    auto ce = ops::cross_entropy(tape, prob, gt);
    auto dice = ops::dice_loss(tape, prob, gt);
    auto combo = combined_loss(tape, prob, gt, 0.2f);
    const double expect = 0.2f * ce->data[0] + 0.8f * dice->data[0];
    require(std::fabs(combo->data[0] - expect) < 1e-7,
            "combined loss is not the exact affine mix");
  }
}

void criterion_schedule_values() {
  TrainConfig cfg;  // lr0 = 4e-4, warmup = 300, power = 6
  const int max_iter = 2000;
  require(lr_schedule(0, cfg, max_iter) == 0.0, "lr(0) != 0");
  require(lr_schedule(300, cfg, max_iter) == 4.0e-4, "lr(300) != 4e-4 exactly");
  require(lr_schedule(300 + max_iter, cfg, max_iter) == 0.0, "lr(warmup+max_iter) != 0");
  double prev = lr_schedule(300, cfg, max_iter);
  for (int it = 301; it <= 300 + max_iter + 100; ++it) {
    const double lr = lr_schedule(it, cfg, max_iter);
    require(lr <= prev, "lr increased after warm-up at iteration " + std::to_string(it));
    prev = lr;
  }
}

void criterion_desk_scale_learning() {
  DeltaSpec delta;
  delta.lora = LoRAConfig{4, true, false, true, false};
  Model model = build_model(toy_config(delta, 2001));

  std::vector<SampleRecord> train_set, val_set, test_set;
  for (int i = 0; i < 200; ++i) train_set.push_back(synth_sample(3001, i, 64));
  for (int i = 0; i < 32; ++i) val_set.push_back(synth_sample(3002, i, 64));
  for (int i = 0; i < 48; ++i) test_set.push_back(synth_sample(3003, i, 64));

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  // the 140-epoch recipe leaves a 500-step run at near-zero lr for most of
  // its steps; this short run uses a linear decay and a brief warm-up
  cfg.lr0 = 1e-3;
  cfg.warmup_iters = 25;
  cfg.power = 1;
  cfg.seed = 2001;
  TrainResult result = train_loop(model, train_set, val_set, cfg);
  require(result.log.size() == 20, "expected 20 validation entries");
  const double initial = result.log.front().mean_train_loss;
  const double final_loss = result.log.back().mean_train_loss;
  require(final_loss < 0.5 * initial,
          "train loss " + fmt(final_loss) + " not below half of initial " + fmt(initial));

  restore_tunable(model, result.best);
  MetricReport report = evaluate_dataset(model, test_set, std::nullopt, Granularity::Micro);
  require(report.iou >= 0.5, "held-out IoU " + fmt(report.iou) + " below 0.5");
  std::cout << "    train loss " << fmt(initial) << " -> " << fmt(final_loss)
            << ", best val F1 " << fmt(result.best.val_f1) << " (epoch " << result.best.epoch
            << "), held-out IoU " << fmt(report.iou) << "\n";
  g_trained = TrainedState{std::move(model), std::move(test_set), report.iou};
}

void criterion_corruption() {
  // bitwise determinism
  Rng rng(53);
  ImageU8 img{40, 40, 3, {}};
  img.pixels.resize(40 * 40 * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  for (const NoiseSpec& spec : {NoiseSpec::case1(), NoiseSpec::case2()}) {
    require(apply_noise(img, spec).pixels == apply_noise(img, spec).pixels,
            "corruption is not deterministic");
  }
  // analytically forced constants
  for (int v : {180, 40}) {
    ImageU8 gray{16, 16, 3, std::vector<uint8_t>(16 * 16 * 3, static_cast<uint8_t>(v))};
    const int expect = std::max(0, v - 50);
    for (uint8_t p : noise_case1(gray, 50, 9).pixels)
      require(int(p) == expect, "case 1 constant mapped to " + std::to_string(int(p)) +
                                    " instead of " + std::to_string(expect));
    for (uint8_t p : noise_case2(gray, 21, 2).pixels)
      require(int(p) == v, "case 2 did not keep the constant " + std::to_string(v));
  }
  // trained toy model degrades under case-2 corruption
  require(g_trained.has_value(), "criterion 10 did not leave a trained model");
  MetricReport noisy = evaluate_dataset(g_trained->model, g_trained->test_set, NoiseSpec::case2(),
                                        Granularity::Micro);
  require(noisy.iou < g_trained->clean_iou,
          "corrupted IoU " + fmt(noisy.iou) + " not below clean IoU " + fmt(g_trained->clean_iou));
  std::cout << "    clean IoU " << fmt(g_trained->clean_iou) << " vs case-2 IoU "
            << fmt(noisy.iou) << "\n";
}

void criterion_round_trips() {
  // window partition/unpartition identity over random shapes
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_int(12));
    const int w = 1 + static_cast<int>(rng.uniform_int(12));
    const int c = 1 + static_cast<int>(rng.uniform_int(5));
    const int win = 1 + static_cast<int>(rng.uniform_int(6));
    auto x = make_tensor({h, w, c});
    for (float& v : x->data) v = static_cast<float>(rng.uniform(-1, 1));
    Tape tape = Tape::inference();
    auto [windows, pad] = window_partition(tape, x, win);
    auto back = window_unpartition(tape, windows, pad, h, w);
    require(back->data == x->data, "partition round trip failed at shape " + shape_str(x->shape));
  }

  // archive save/load bitwise
  const fs::path dir = fs::temp_directory_path() / "crackseg_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  DeltaSpec delta;
  delta.lora = LoRAConfig{};
  Model model = build_model(toy_config(delta, 3004));
  Rng jrng(61);
  for (const auto& e : model.params->entries())
    for (float& v : e.value->data) v += static_cast<float>(jrng.uniform(-0.01, 0.01));
  const std::string path = (dir / "model.ckpt").string();
  save_model_archive(model, path, SaveSet::Full, {});
  Model restored = build_model(toy_config(delta, 3004));
  load_model_archive(path, restored);
  for (std::size_t i = 0; i < model.params->entries().size(); ++i)
    require(model.params->entries()[i].value->data ==
                restored.params->entries()[i].value->data,
            "archive round trip not bitwise for " + model.params->entries()[i].name);

  // CLI reproducibility: identical seeds, identical artifacts
  const std::string a = (dir / "synth_a").string();
  const std::string b = (dir / "synth_b").string();
  require(cli::run({"synth", "--n", "6", "--size", "48", "--seed", "77", "--out", a}) == 0,
          "synth run failed");
  require(cli::run({"synth", "--n", "6", "--size", "48", "--seed", "77", "--out", b}) == 0,
          "synth run failed");
  for (const char* sub : {"images", "masks"})
    for (const auto& entry : fs::directory_iterator(fs::path(a) / sub)) {
      std::ifstream fa(entry.path(), std::ios::binary);
      std::ifstream fb(fs::path(b) / sub / entry.path().filename(), std::ios::binary);
      std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
      std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
      require(!ca.empty() && ca == cb, "CLI synth runs differ for " + entry.path().string());
    }
  fs::remove_all(dir);
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void()> fn;
    double budget_seconds;  // 0 = no stated budget
  };
  const std::vector<Criterion> criteria = {
      {"gradient suite: end-to-end finite differences on ViT-Toy", criterion_gradient_suite, 300},
      {"LoRA identity at init (bitwise)", criterion_lora_identity, 0},
      {"LoRA merge equivalence within 1e-5 over 100 probes, r in {1,2,4}",
       criterion_merge_equivalence, 0},
      {"adapter identity at zero init (bitwise, all blocks)", criterion_adapter_identity, 0},
      {"freeze isolation: gradient set equals the freeze mask; frozen weights fixed",
       criterion_freeze_isolation, 0},
      {"parameter-count reproduction (163840 / 5326848 / head cross-check)",
       criterion_parameter_counts, 0},
      {"metric oracle: 1000 random mask pairs match brute-force counting",
       criterion_metric_oracle, 0},
      {"loss values: CE=ln2, Dice~0, exact lambda=0.2 mix", criterion_loss_values, 0},
      {"schedule values: lr(0)=0, lr(300)=4e-4, lr(end)=0, non-increasing",
       criterion_schedule_values, 0},
      {"desk-scale learning: IoU >= 0.5 and halved train loss in 20 epochs",
       criterion_desk_scale_learning, 900},
      {"corruption determinism, forced constants, noisy-vs-clean gap", criterion_corruption, 0},
      {"round trips: windows, archive, CLI reproducibility", criterion_round_trips, 0},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      criteria[i].fn();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty() && criteria[i].budget_seconds > 0 && elapsed > criteria[i].budget_seconds)
      error = "exceeded the " + fmt(criteria[i].budget_seconds) + "s runtime budget";
    if (error.empty()) {
      std::printf("[PASS] criterion %02zu: %s (%.1fs)\n", i + 1, criteria[i].name, elapsed);
    } else {
      std::printf("[FAIL] criterion %02zu: %s (%.1fs)\n       %s\n", i + 1, criteria[i].name,
                  elapsed, error.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
