// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Flat key = value configuration with dotted sections, compiled-in presets
// and flag overrides. `config show` dumps the effective configuration in the
// same format the parser reads.

#pragma once

#include <sstream>

#include <json.hpp>

#include "dcfnet/model.hpp"
#include "dcfnet/optim.hpp"

namespace dcfnet {

struct RunConfig {
  ModelConfig model;
  // training
  size_t epochs = 30;
  size_t batch = 4;
  double base_lr = 5e-4;
  double warmup_epochs = 5.0;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  double val_fraction = 0.1;
  size_t threads = 2;
  std::string precision = "float";  // float | double
  // data
  std::string manifest;
  std::string condition = "clean";

  Schedule schedule() const {
    Schedule s;
    s.base_lr = base_lr;
    s.warmup_epochs = warmup_epochs;
    s.total_epochs = static_cast<double>(epochs);
    return s;
  }
};

inline RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  if (name == "paper") {
    cfg.model = ModelConfig::paper();
    cfg.epochs = 150;
  } else if (name == "desk") {
    cfg.model = ModelConfig::desk();
    cfg.epochs = 30;
  } else {
    throw ValueError("unknown preset: " + name + " (have: paper, desk)");
  }
  return cfg;
}

inline std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(12);
  os << "model.C = " << cfg.model.channels << "\n";
  os << "model.D = " << cfg.model.fused_dim << "\n";
  os << "model.O = " << cfg.model.dsfb_blocks << "\n";
  os << "model.N = " << cfg.model.dual_path_blocks << "\n";
  os << "model.heads = " << cfg.model.heads << "\n";
  os << "model.hidden = " << cfg.model.hidden << "\n";
  os << "model.d_attn = " << cfg.model.d_attn << "\n";
  os << "model.se_reduction = " << cfg.model.se_reduction << "\n";
  os << "model.extractor = " << extractor_kind_name(cfg.model.extractor) << "\n";
  os << "model.stft.n_fft = " << cfg.model.n_fft << "\n";
  os << "model.stft.hop = " << cfg.model.hop << "\n";
  os << "model.drc_exponent = " << cfg.model.drc_exponent << "\n";
  os << "train.epochs = " << cfg.epochs << "\n";
  os << "train.batch = " << cfg.batch << "\n";
  os << "train.lr = " << cfg.base_lr << "\n";
  os << "train.warmup_epochs = " << cfg.warmup_epochs << "\n";
  os << "train.wd = " << cfg.weight_decay << "\n";
  os << "train.clip = " << cfg.clip_norm << "\n";
  os << "train.seed = " << cfg.seed << "\n";
  os << "train.val_fraction = " << cfg.val_fraction << "\n";
  os << "train.threads = " << cfg.threads << "\n";
  os << "train.precision = " << cfg.precision << "\n";
  os << "data.manifest = " << cfg.manifest << "\n";
  os << "data.condition = " << cfg.condition << "\n";
  return os.str();
}

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto to_size = [&](const std::string& v) -> size_t {
    try {
      return static_cast<size_t>(std::stoull(v));
    } catch (...) {
      throw ValueError("config: bad integer for " + key + ": " + v);
    }
  };
  auto to_double = [&](const std::string& v) -> double {
    try {
      return std::stod(v);
    } catch (...) {
      throw ValueError("config: bad number for " + key + ": " + v);
    }
  };
  if (key == "model.C") cfg.model.channels = to_size(value);
  else if (key == "model.D") cfg.model.fused_dim = to_size(value);
  else if (key == "model.O") cfg.model.dsfb_blocks = to_size(value);
  else if (key == "model.N") cfg.model.dual_path_blocks = to_size(value);
  else if (key == "model.heads") cfg.model.heads = to_size(value);
  else if (key == "model.hidden") cfg.model.hidden = to_size(value);
  else if (key == "model.d_attn") cfg.model.d_attn = to_size(value);
  else if (key == "model.se_reduction") cfg.model.se_reduction = to_size(value);
  else if (key == "model.extractor") cfg.model.extractor = extractor_kind_from(value);
  else if (key == "model.stft.n_fft") cfg.model.n_fft = to_size(value);
  else if (key == "model.stft.hop") cfg.model.hop = to_size(value);
  else if (key == "model.drc_exponent") cfg.model.drc_exponent = to_double(value);
  else if (key == "train.epochs") cfg.epochs = to_size(value);
  else if (key == "train.batch") cfg.batch = to_size(value);
  else if (key == "train.lr") cfg.base_lr = to_double(value);
  else if (key == "train.warmup_epochs") cfg.warmup_epochs = to_double(value);
  else if (key == "train.wd") cfg.weight_decay = to_double(value);
  else if (key == "train.clip") cfg.clip_norm = to_double(value);
  else if (key == "train.seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
  else if (key == "train.val_fraction") cfg.val_fraction = to_double(value);
  else if (key == "train.threads") cfg.threads = to_size(value);
  else if (key == "train.precision") {
    check(value == "float" || value == "double", "config: precision must be float or double");
    cfg.precision = value;
  } else if (key == "data.manifest") cfg.manifest = value;
  else if (key == "data.condition") cfg.condition = value;
  else throw ValueError("config: unknown key: " + key);
}

inline std::string strip_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline void parse_config_text(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip_ws(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(cfg, strip_ws(line.substr(0, eq)), strip_ws(line.substr(eq + 1)));
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  parse_config_text(cfg, f, path);
}

// JSON snapshot stored inside checkpoints.
inline std::string config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = {{"C", cfg.model.channels},
                {"D", cfg.model.fused_dim},
                {"O", cfg.model.dsfb_blocks},
                {"N", cfg.model.dual_path_blocks},
                {"heads", cfg.model.heads},
                {"hidden", cfg.model.hidden},
                {"d_attn", cfg.model.d_attn},
                {"se_reduction", cfg.model.se_reduction},
                {"extractor", extractor_kind_name(cfg.model.extractor)},
                {"n_fft", cfg.model.n_fft},
                {"hop", cfg.model.hop},
                {"drc_exponent", cfg.model.drc_exponent}};
  j["train"] = {{"epochs", cfg.epochs},       {"batch", cfg.batch},
                {"lr", cfg.base_lr},          {"warmup_epochs", cfg.warmup_epochs},
                {"wd", cfg.weight_decay},     {"clip", cfg.clip_norm},
                {"seed", cfg.seed},           {"val_fraction", cfg.val_fraction},
                {"precision", cfg.precision}};
  return j.dump();
}

inline ModelConfig model_config_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  if (j.contains("config")) j = j["config"];
  auto m = j.at("model");
  ModelConfig cfg;
  cfg.channels = m.at("C").get<size_t>();
  cfg.fused_dim = m.at("D").get<size_t>();
  cfg.dsfb_blocks = m.at("O").get<size_t>();
  cfg.dual_path_blocks = m.at("N").get<size_t>();
  cfg.heads = m.at("heads").get<size_t>();
  cfg.hidden = m.at("hidden").get<size_t>();
  cfg.d_attn = m.at("d_attn").get<size_t>();
  cfg.se_reduction = m.at("se_reduction").get<size_t>();
  cfg.extractor = extractor_kind_from(m.at("extractor").get<std::string>());
  cfg.n_fft = m.at("n_fft").get<size_t>();
  cfg.hop = m.at("hop").get<size_t>();
  cfg.drc_exponent = m.at("drc_exponent").get<double>();
  return cfg;
}

}  // namespace dcfnet
