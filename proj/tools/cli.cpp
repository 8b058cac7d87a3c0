#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "crackseg/archive.hpp"
#include "crackseg/config.hpp"
#include "crackseg/gradcheck.hpp"
#include "crackseg/image.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/noise.hpp"
#include "crackseg/synth.hpp"
#include "crackseg/train.hpp"

namespace fs = std::filesystem;

namespace crackseg::cli {

namespace {

NoiseSpec parse_noise(const std::string& name) {
  if (name == "case1") return NoiseSpec::case1();
  if (name == "case2") return NoiseSpec::case2();
  throw ConfigError("noise must be case1 or case2, got " + name);
}

RunConfig config_from_meta(const std::map<std::string, std::string>& meta) {
  FlatConfig flat;
  for (const auto& [key, value] : meta)
    if (key.rfind("cfg.", 0) == 0) flat[key.substr(4)] = value;
  if (flat.empty()) throw IoError("checkpoint carries no embedded configuration");
  return RunConfig::from_flat(flat);
}

std::map<std::string, std::string> meta_from_config(const RunConfig& rc) {
  std::map<std::string, std::string> meta;
  for (const auto& [key, value] : rc.to_flat()) meta["cfg." + key] = value;
  return meta;
}

Model model_from_checkpoint(const std::string& path, RunConfig* rc_out) {
  Archive archive = load_archive(path);
  RunConfig rc = config_from_meta(archive.meta);
  Model model = build_model(rc.model_config());
  for (const auto& entry : archive.tensors) {
    if (!model.params->contains(entry.name))
      throw IoError("archive tensor not in model: " + entry.name);
    const ParamEntry& target = model.params->at(entry.name);
    if (target.value->shape != entry.shape)
      throw IoError("archive shape mismatch for " + entry.name);
    target.value->data = entry.data;
  }
  if (rc_out) *rc_out = rc;
  return model;
}

std::vector<float> image_to_model_input(const ImageU8& rgb, int size) {
  ImageU8 scaled = resize_bilinear_u8(rgb, size, size);
  const int64_t pixels = static_cast<int64_t>(size) * size;
  std::vector<float> out(3 * pixels);
  for (int64_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c)
      out[c * pixels + p] = static_cast<float>(scaled.pixels[p * 3 + c]) / 255.0f;
  return out;
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = RunConfig::from_file(config_path);
  if (rc.data_root.empty()) throw ConfigError("train requires data.root in the config");
  const int size = rc.encoder_config().image_size;
  auto train_set = load_dataset({rc.data_root, "train", size});
  auto val_set = load_dataset({rc.data_root, "val", size});

  Model model = build_model(rc.model_config());
  fs::create_directories(rc.out_dir);
  {
    std::ofstream resolved(fs::path(rc.out_dir) / "resolved.cfg");
    resolved << serialize_config(rc.to_flat());
  }
  std::ofstream log(fs::path(rc.out_dir) / "train_log.csv");
  log << epoch_log_header() << "\n";
  std::cout << epoch_log_header() << "\n";

  TrainResult result = train_loop(model, train_set, val_set, rc.train, [&](const EpochLog& row) {
    const std::string line = epoch_log_line(row);
    log << line << "\n";
    log.flush();
    std::cout << line << std::endl;
  });

  restore_tunable(model, result.best);
  auto meta = meta_from_config(rc);
  meta["best_epoch"] = std::to_string(result.best.epoch);
  meta["best_val_f1"] = std::to_string(result.best.val_f1);
  const std::string ckpt = (fs::path(rc.out_dir) / "best.ckpt").string();
  save_model_archive(model, ckpt, SaveSet::TunableOnly, meta);
  std::cout << "best epoch " << result.best.epoch << " val_f1 " << result.best.val_f1
            << " -> " << ckpt << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& noise_name, const std::string& granularity_name,
             const std::string& split, const std::string& out_path) {
  RunConfig rc = RunConfig::from_file(config_path);
  if (rc.data_root.empty()) throw ConfigError("eval requires data.root in the config");
  Model model = build_model(rc.model_config());
  load_model_archive(checkpoint, model);
  const int size = rc.encoder_config().image_size;
  auto samples = load_dataset({rc.data_root, split, size});
  std::optional<NoiseSpec> noise;
  if (!noise_name.empty()) noise = parse_noise(noise_name);
  Granularity granularity = rc.granularity;
  if (!granularity_name.empty()) {
    if (granularity_name == "micro")
      granularity = Granularity::Micro;
    else if (granularity_name == "macro")
      granularity = Granularity::Macro;
    else
      throw ConfigError("granularity must be micro or macro");
  }
  MetricReport report = evaluate_dataset(model, samples, noise, granularity);
  std::cout << report_table(report);
  if (!out_path.empty()) write_report_record(report, out_path);
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& out_path) {
  RunConfig rc;
  Model model = model_from_checkpoint(checkpoint, &rc);
  const int size = rc.encoder_config().image_size;
  ImageU8 original = load_png(image_path, 3);
  Tape tape = Tape::inference();
  auto logits =
      model_forward(tape, model, make_tensor({3, size, size}, image_to_model_input(original, size)));
  auto prob = crack_probability(tape, logits);
  auto mask = binarize_threshold(*prob, static_cast<float>(rc.train.binarize));
  ImageU8 gray{size, size, 1, std::vector<uint8_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) gray.pixels[i] = mask[i] ? 255 : 0;
  save_png(out_path, resize_nearest_u8(gray, original.width, original.height));
  return 0;
}

int cmd_corrupt(const std::string& in_dir, const std::string& out_dir,
                const std::string& noise_name) {
  const NoiseSpec spec = parse_noise(noise_name);
  if (!fs::is_directory(in_dir)) throw IoError("not a directory: " + in_dir);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& file : files) {
    ImageU8 image = load_png(file.string(), 3);
    save_png((fs::path(out_dir) / file.filename()).string(), apply_noise(image, spec));
  }
  std::cout << "corrupted " << files.size() << " images -> " << out_dir << "\n";
  return 0;
}

int cmd_count_params(const std::string& config_path) {
  RunConfig rc = RunConfig::from_file(config_path);
  Model model = build_model(rc.model_config(), /*materialize=*/false);
  std::cout << "all " << count_parameters(model, CountFilter::All) << "\n";
  std::cout << "tunable " << count_parameters(model, CountFilter::Tunable) << "\n";
  std::cout << "delta-only " << count_parameters(model, CountFilter::DeltaOnly) << "\n";
  return 0;
}

int cmd_merge_lora(const std::string& checkpoint, const std::string& out_path) {
  RunConfig rc;
  Model model = model_from_checkpoint(checkpoint, &rc);
  merge_lora(model);
  auto meta = meta_from_config(rc);
  meta["lora_merged"] = "true";
  save_model_archive(model, out_path, SaveSet::Full, meta);
  std::cout << "merged archive -> " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, int samples) {
  RunConfig rc = RunConfig::from_file(config_path);
  Model model = build_model(rc.model_config());
  const int size = rc.encoder_config().image_size;
  SampleRecord sample = synth_sample(rc.seed, 0, size);
  GradCheckOptions opts;
  opts.samples_per_tensor = samples;
  opts.seed = rc.seed + 0x617ad;
  opts.lambda_ce = static_cast<float>(rc.train.lambda_ce);
  std::vector<float> target(sample.mask.begin(), sample.mask.end());
  GradCheckResult result = gradcheck_model(model, sample.image, target, opts);
  std::cout << "checked " << result.checked << " coordinates (" << result.skipped_small
            << " skipped below 1e-6)\n";
  std::cout << "max relative error " << result.max_rel_err << " at " << result.worst_param
            << " (analytic " << result.worst_analytic << ", fd " << result.worst_fd << ")\n";
  if (!result.passed(1e-3)) {
    std::cout << "FAIL (tolerance 1e-3)\n";
    return 2;
  }
  std::cout << "PASS (tolerance 1e-3)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"parameter-efficient fine-tuning engine for ViT crack segmentation"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, image_path, out_path, in_dir, out_dir;
  std::string noise_name, granularity_name, split = "test";
  int synth_n = 16, synth_size = 448, gc_samples = 4;
  uint64_t synth_seed = 1;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--noise", noise_name, "case1 or case2");
  eval->add_option("--granularity", granularity_name, "micro or macro");
  eval->add_option("--split", split, "dataset split (default test)");
  eval->add_option("--out", out_path, "write the metric record here");

  auto* infer = app.add_subcommand("infer", "predict a mask for one image");
  infer->add_option("--checkpoint", checkpoint)->required();
  infer->add_option("--image", image_path)->required();
  infer->add_option("--out", out_path)->required();

  auto* corrupt = app.add_subcommand("corrupt", "apply artificial noise to a directory of PNGs");
  corrupt->add_option("--in", in_dir)->required();
  corrupt->add_option("--out", out_dir)->required();
  corrupt->add_option("--noise", noise_name)->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic crack dataset split");
  synth->add_option("--n", synth_n)->required();
  synth->add_option("--size", synth_size);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", out_dir)->required();

  auto* count = app.add_subcommand("count-params", "print parameter counts for a config");
  count->add_option("--config", config_path)->required();

  auto* merge = app.add_subcommand("merge-lora", "fold LoRA deltas into a full-weight archive");
  merge->add_option("--checkpoint", checkpoint)->required();
  merge->add_option("--out", out_path)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--config", config_path)->required();
  gradcheck->add_option("--samples", gc_samples, "coordinates per tensor");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed())
      return cmd_eval(config_path, checkpoint, noise_name, granularity_name, split, out_path);
    if (infer->parsed()) return cmd_infer(checkpoint, image_path, out_path);
    if (corrupt->parsed()) return cmd_corrupt(in_dir, out_dir, noise_name);
    if (synth->parsed()) {
      synth_generate(synth_n, synth_size, synth_seed, out_dir);
      std::cout << "wrote " << synth_n << " samples -> " << out_dir << "\n";
      return 0;
    }
    if (count->parsed()) return cmd_count_params(config_path);
    if (merge->parsed()) return cmd_merge_lora(checkpoint, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, gc_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

}  // namespace crackseg::cli
