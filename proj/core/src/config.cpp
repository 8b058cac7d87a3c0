#include "crackseg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace crackseg {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": " + value);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    return std::stoi(value);
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": " + value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": " + value);
  }
}

LoRAConfig parse_lora_targets(LoRAConfig lora, const std::string& value) {
  lora.on_query = lora.on_key = lora.on_value = lora.on_output = false;
  std::istringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "q" || item == "query")
      lora.on_query = true;
    else if (item == "k" || item == "key")
      lora.on_key = true;
    else if (item == "v" || item == "value")
      lora.on_value = true;
    else if (item == "o" || item == "out" || item == "output")
      lora.on_output = true;
    else
      throw ConfigError("unknown lora target: " + item);
  }
  return lora;
}

std::string lora_targets_string(const LoRAConfig& lora) {
  std::string s;
  auto append = [&s](const char* t) {
    if (!s.empty()) s += ",";
    s += t;
  };
  if (lora.on_query) append("q");
  if (lora.on_key) append("k");
  if (lora.on_value) append("v");
  if (lora.on_output) append("o");
  return s;
}

}  // namespace

FlatConfig parse_config_text(const std::string& text) {
  FlatConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key on config line " + std::to_string(lineno));
    config[key] = value;
  }
  return config;
}

FlatConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const FlatConfig& config) {
  std::ostringstream out;
  for (const auto& [key, value] : config) out << key << " = " << value << "\n";
  return out.str();
}

RunConfig RunConfig::from_flat(const FlatConfig& flat) {
  RunConfig rc;
  bool adapter_enabled = false, lora_enabled = false;
  AdapterConfig adapter;
  LoRAConfig lora;
  for (const auto& [key, value] : flat) {
    if (key == "run.seed")
      rc.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "run.out_dir")
      rc.out_dir = value;
    else if (key == "model.preset")
      rc.preset = value;
    else if (key == "model.image_size")
      rc.image_size = parse_int(key, value);
    else if (key == "delta.adapter.enable")
      adapter_enabled = parse_bool(key, value);
    else if (key == "delta.adapter.middle_dim")
      adapter.middle_dim = parse_int(key, value);
    else if (key == "delta.adapter.scaling")
      adapter.scaling = static_cast<float>(parse_double(key, value));
    else if (key == "delta.adapter.sequential")
      adapter.sequential = parse_bool(key, value);
    else if (key == "delta.adapter.parallel")
      adapter.parallel = parse_bool(key, value);
    else if (key == "delta.lora.enable")
      lora_enabled = parse_bool(key, value);
    else if (key == "delta.lora.rank")
      lora.rank = parse_int(key, value);
    else if (key == "delta.lora.targets")
      lora = parse_lora_targets(lora, value);
    else if (key == "train.epochs")
      rc.train.epochs = parse_int(key, value);
    else if (key == "train.batch_size")
      rc.train.batch_size = parse_int(key, value);
    else if (key == "train.lr0")
      rc.train.lr0 = parse_double(key, value);
    else if (key == "train.warmup_iters")
      rc.train.warmup_iters = parse_int(key, value);
    else if (key == "train.power")
      rc.train.power = parse_int(key, value);
    else if (key == "train.lambda_ce")
      rc.train.lambda_ce = parse_double(key, value);
    else if (key == "train.beta1")
      rc.train.beta1 = parse_double(key, value);
    else if (key == "train.beta2")
      rc.train.beta2 = parse_double(key, value);
    else if (key == "train.weight_decay")
      rc.train.weight_decay = parse_double(key, value);
    else if (key == "train.binarize_threshold")
      rc.train.binarize = parse_double(key, value);
    else if (key == "data.root")
      rc.data_root = value;
    else if (key == "eval.granularity") {
      if (value == "micro")
        rc.granularity = Granularity::Micro;
      else if (value == "macro")
        rc.granularity = Granularity::Macro;
      else
        throw ConfigError("eval.granularity must be micro or macro, got " + value);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  if (adapter_enabled) rc.delta.adapter = adapter;
  if (lora_enabled) rc.delta.lora = lora;
  rc.train.seed = rc.seed;
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_flat(load_config_file(path));
}

FlatConfig RunConfig::to_flat() const {
  FlatConfig flat;
  flat["run.seed"] = std::to_string(seed);
  flat["run.out_dir"] = out_dir;
  flat["model.preset"] = preset;
  flat["model.image_size"] = std::to_string(encoder_config().image_size);
  flat["delta.adapter.enable"] = delta.adapter ? "true" : "false";
  if (delta.adapter) {
    flat["delta.adapter.middle_dim"] = std::to_string(delta.adapter->middle_dim);
    std::ostringstream s;
    s << delta.adapter->scaling;
    flat["delta.adapter.scaling"] = s.str();
    flat["delta.adapter.sequential"] = delta.adapter->sequential ? "true" : "false";
    flat["delta.adapter.parallel"] = delta.adapter->parallel ? "true" : "false";
  }
  flat["delta.lora.enable"] = delta.lora ? "true" : "false";
  if (delta.lora) {
    flat["delta.lora.rank"] = std::to_string(delta.lora->rank);
    flat["delta.lora.targets"] = lora_targets_string(*delta.lora);
  }
  flat["train.epochs"] = std::to_string(train.epochs);
  flat["train.batch_size"] = std::to_string(train.batch_size);
  std::ostringstream lr;
  lr << train.lr0;
  flat["train.lr0"] = lr.str();
  flat["train.warmup_iters"] = std::to_string(train.warmup_iters);
  flat["train.power"] = std::to_string(train.power);
  std::ostringstream lam;
  lam << train.lambda_ce;
  flat["train.lambda_ce"] = lam.str();
  std::ostringstream b1, b2, wd, bt;
  b1 << train.beta1;
  b2 << train.beta2;
  wd << train.weight_decay;
  bt << train.binarize;
  flat["train.beta1"] = b1.str();
  flat["train.beta2"] = b2.str();
  flat["train.weight_decay"] = wd.str();
  flat["train.binarize_threshold"] = bt.str();
  if (!data_root.empty()) flat["data.root"] = data_root;
  flat["eval.granularity"] = granularity == Granularity::Micro ? "micro" : "macro";
  return flat;
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig ec;
  if (preset == "vit-b")
    ec = EncoderConfig::vit_b();
  else if (preset == "vit-l")
    ec = EncoderConfig::vit_l();
  else if (preset == "vit-h")
    ec = EncoderConfig::vit_h();
  else if (preset == "vit-toy")
    ec = EncoderConfig::vit_toy();
  else
    throw ConfigError("unknown model preset: " + preset);
  if (image_size > 0) ec.image_size = image_size;
  return ec;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.encoder = encoder_config();
  mc.decoder = DecoderConfig{};
  mc.delta = delta;
  mc.init_seed = seed;
  return mc;
}

}  // namespace crackseg
