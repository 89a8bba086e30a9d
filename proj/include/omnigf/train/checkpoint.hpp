#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnigf/model/config.hpp"
#include "omnigf/prompt/system_prompts.hpp"
#include "omnigf/train/optimizer.hpp"

namespace omnigf {

// Checkpoint layout:
//   8-byte magic | u64 header length | header JSON | raw tensor blob
// The header records the backbone config (the frozen base is rebuilt from its
// init seed), a tensor manifest, training metadata, and an FNV-1a hash of the
// blob for integrity checking. Only trainable tensors (adapters + heads) and
// optimizer moments are stored.

inline constexpr char kCkptMagic[9] = "OGFCKPT1";

inline nlohmann::json backbone_config_to_json(const BackboneConfig& c) {
  return {{"hidden_dim", c.hidden_dim},   {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},     {"vocab_size", c.vocab_size},
          {"scene_side", c.scene_side},   {"patch", c.patch},
          {"head_side", c.head_side},     {"ffn_mult", c.ffn_mult},
          {"max_context", c.max_context}, {"lora_rank", c.lora_rank},
          {"lora_alpha", c.lora_alpha},   {"init_seed", c.init_seed}};
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.scene_side = j.at("scene_side").get<int>();
  c.patch = j.at("patch").get<int>();
  c.head_side = j.at("head_side").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.max_context = j.at("max_context").get<int>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

template <class T>
struct NamedTensor {
  std::string name;
  const Tensor<T>* tensor;
};

struct CheckpointMeta {
  int step = 0;
  int opt_step = 0;
  std::string task_mode = "localize+semantic";
  std::uint64_t data_rng_state = 0;
};

template <class T>
void save_checkpoint(const std::string& path, const BackboneConfig& cfg,
                     const std::vector<NamedTensor<T>>& tensors, const CheckpointMeta& meta) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& nt : tensors) {
    nlohmann::json e;
    e["name"] = nt.name;
    e["shape"] = nt.tensor->shape;
    e["offset"] = blob.size();
    const size_t bytes = static_cast<size_t>(nt.tensor->size()) * sizeof(T);
    e["bytes"] = bytes;
    manifest.push_back(e);
    const size_t pos = blob.size();
    blob.resize(pos + bytes);
    std::memcpy(blob.data() + pos, nt.tensor->ptr(), bytes);
  }
  nlohmann::json header;
  header["format_version"] = 1;
  header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  header["config"] = backbone_config_to_json(cfg);
  header["tensors"] = manifest;
  header["step"] = meta.step;
  header["opt_step"] = meta.opt_step;
  header["task_mode"] = meta.task_mode;
  header["data_rng_state"] = meta.data_rng_state;
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(blob.data(), blob.size())));
  header["blob_fnv1a64"] = std::string(hash_hex);

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(kCkptMagic, 8);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // expected by the model, absent in file
  std::vector<std::string> unexpected;  // present in file, unknown to the model
};

template <class T>
struct CheckpointFile {
  BackboneConfig config;
  CheckpointMeta meta;
  std::map<std::string, Tensor<T>> tensors;
};

template <class T>
CheckpointFile<T> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(hs);
  const std::string want_dtype = sizeof(T) == 4 ? "f32" : "f64";
  if (header.at("dtype").get<std::string>() != want_dtype)
    throw std::runtime_error(path + ": dtype mismatch (checkpoint is " +
                             header.at("dtype").get<std::string>() + ")");
  std::vector<char> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(blob.data(), blob.size())));
  if (header.at("blob_fnv1a64").get<std::string>() != hash_hex)
    throw std::runtime_error(path + ": integrity hash mismatch (corrupt checkpoint)");

  CheckpointFile<T> out;
  out.config = backbone_config_from_json(header.at("config"));
  out.meta.step = header.value("step", 0);
  out.meta.opt_step = header.value("opt_step", 0);
  out.meta.task_mode = header.value("task_mode", std::string("localize+semantic"));
  out.meta.data_rng_state = header.value("data_rng_state", std::uint64_t(0));
  for (const auto& e : header.at("tensors")) {
    Tensor<T> t(e.at("shape").get<std::vector<int>>());
    const size_t off = e.at("offset").get<size_t>();
    const size_t bytes = e.at("bytes").get<size_t>();
    if (off + bytes > blob.size()) throw std::runtime_error(path + ": manifest out of range");
    if (bytes != static_cast<size_t>(t.size()) * sizeof(T))
      throw std::runtime_error(path + ": tensor size mismatch for " + e.at("name").get<std::string>());
    std::memcpy(t.ptr(), blob.data() + off, bytes);
    out.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace omnigf
