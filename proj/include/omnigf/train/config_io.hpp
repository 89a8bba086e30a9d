#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "omnigf/train/trainer.hpp"

namespace omnigf {

// Plain key = value training config files. '#' starts a comment; unknown keys
// are rejected so typos fail loudly. `preset` applies first, explicit keys
// override it.

inline TrainConfig train_preset(const std::string& name) {
  TrainConfig cfg;
  if (name == "desk") {
    cfg.backbone = desk_config();
    cfg.batch_size = 8;
    cfg.accum_steps = 2;
    cfg.lr_adapter = 1e-4;
    cfg.lr_head = 2.5e-4;
    cfg.total_steps = 1000;
  } else if (name == "overfit") {
    cfg.backbone = overfit_config();
    cfg.batch_size = 1;
    cfg.accum_steps = 1;
    cfg.lr_adapter = 2e-3;
    cfg.lr_head = 5e-3;
    cfg.total_steps = 2000;
    cfg.synth_count = 64;
    cfg.synth.side = 64;
  } else if (name == "finetune") {
    // Downstream fine-tuning from a base checkpoint at reduced rates.
    cfg.backbone = desk_config();
    cfg.batch_size = 8;
    cfg.accum_steps = 2;
    cfg.lr_adapter = 2.5e-5;
    cfg.lr_head = 2.5e-5;
    cfg.total_steps = 500;
  } else if (!name.empty()) {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return cfg;
}

inline TrainConfig parse_train_config(std::istream& in, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  std::string preset;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r\n") != std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\n");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r\n");
      return s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (kv.count("preset")) {
    preset = kv["preset"];
    kv.erase("preset");
  }
  TrainConfig cfg = train_preset(preset);

  auto geti = [&](const std::string& k, int& dst) { dst = std::stoi(kv[k]); };
  auto getd = [&](const std::string& k, double& dst) { dst = std::stod(kv[k]); };
  auto getu = [&](const std::string& k, std::uint64_t& dst) { dst = std::stoull(kv[k]); };
  auto getb = [&](const std::string& k, bool& dst) {
    dst = kv[k] == "1" || kv[k] == "true" || kv[k] == "yes";
  };

  for (auto it = kv.begin(); it != kv.end(); ++it) {
    const std::string& k = it->first;
    if (k == "hidden_dim") geti(k, cfg.backbone.hidden_dim);
    else if (k == "num_layers") geti(k, cfg.backbone.num_layers);
    else if (k == "num_heads") geti(k, cfg.backbone.num_heads);
    else if (k == "scene_side") geti(k, cfg.backbone.scene_side);
    else if (k == "patch") geti(k, cfg.backbone.patch);
    else if (k == "head_side") geti(k, cfg.backbone.head_side);
    else if (k == "ffn_mult") geti(k, cfg.backbone.ffn_mult);
    else if (k == "max_context") geti(k, cfg.backbone.max_context);
    else if (k == "lora_rank") geti(k, cfg.backbone.lora_rank);
    else if (k == "lora_alpha") getd(k, cfg.backbone.lora_alpha);
    else if (k == "init_seed") getu(k, cfg.backbone.init_seed);
    else if (k == "task_mode") {
      if (it->second == "localize") cfg.task_mode = TaskMode::Localize;
      else if (it->second == "localize+semantic" || it->second == "semantic")
        cfg.task_mode = TaskMode::LocalizeSemantic;
      else throw std::runtime_error(origin + ": bad task_mode '" + it->second + "'");
    }
    else if (k == "batch_size") geti(k, cfg.batch_size);
    else if (k == "accum_steps") geti(k, cfg.accum_steps);
    else if (k == "lr_adapter") getd(k, cfg.lr_adapter);
    else if (k == "lr_head") getd(k, cfg.lr_head);
    else if (k == "weight_decay") getd(k, cfg.weight_decay);
    else if (k == "total_steps") geti(k, cfg.total_steps);
    else if (k == "seed") getu(k, cfg.seed);
    else if (k == "lambda_lm") getd(k, cfg.weights.lm);
    else if (k == "lambda_hm") getd(k, cfg.weights.hm);
    else if (k == "lambda_inout") getd(k, cfg.weights.inout);
    else if (k == "lambda_soc") getd(k, cfg.weights.soc);
    else if (k == "heatmap_sigma") getd(k, cfg.heatmap_sigma);
    else if (k == "train_language_branch") getb(k, cfg.train_language_branch);
    else if (k == "enable_injection") getb(k, cfg.enable_injection);
    else if (k == "data") cfg.data_path = it->second == "synthetic" ? "" : it->second;
    else if (k == "synth_count") geti(k, cfg.synth_count);
    else if (k == "synth_seed") getu(k, cfg.synth_seed);
    else if (k == "synth_side") geti(k, cfg.synth.side);
    else if (k == "synth_persons_min") geti(k, cfg.synth.persons_min);
    else if (k == "synth_persons_max") geti(k, cfg.synth.persons_max);
    else if (k == "synth_head_px") geti(k, cfg.synth.head_px);
    else if (k == "synth_unknown_prob") getd(k, cfg.synth.unknown_prob);
    else if (k == "out_dir") cfg.out_dir = it->second;
    else if (k == "finetune_from") cfg.finetune_from = it->second;
    else if (k == "resume_from") cfg.resume_from = it->second;
    else if (k == "checkpoint_every") geti(k, cfg.checkpoint_every);
    else if (k == "max_new_tokens") geti(k, cfg.max_new_tokens);
    else throw std::runtime_error(origin + ": unknown config key '" + k + "'");
  }
  cfg.backbone.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  return parse_train_config(f, path);
}

}  // namespace omnigf
