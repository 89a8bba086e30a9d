#pragma once

#include <cstdint>
#include <stdexcept>

#include "omnigf/prompt/tokenizer.hpp"

namespace omnigf {

struct BackboneConfig {
  int hidden_dim = 128;
  int num_layers = 4;
  int num_heads = 4;
  int vocab_size = Tokenizer::kVocabSize;
  int scene_side = 224;   // square scene input
  int patch = 14;         // vision patch side
  int head_side = 64;     // cropped head input side
  int ffn_mult = 4;
  int max_context = 2048;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  std::uint64_t init_seed = 1234;

  int vision_tokens() const {
    const int g = scene_side / patch;
    return g * g;
  }
  int vision_grid() const { return scene_side / patch; }
  int heatmap_side() const { return 4 * vision_grid(); }

  void validate() const {
    if (scene_side % patch != 0)
      throw std::invalid_argument("config: scene side must be divisible by patch");
    if (hidden_dim % num_heads != 0)
      throw std::invalid_argument("config: hidden dim must be divisible by head count");
    if (lora_rank < 1) throw std::invalid_argument("config: lora rank must be >= 1");
    if (lora_rank > hidden_dim)
      throw std::invalid_argument("config: lora rank exceeds projection dimension");
    if (hidden_dim % 2 != 0) throw std::invalid_argument("config: hidden dim must be even");
  }
};

// Desk-scale reference: trainable on one CPU core in minutes while keeping
// every architectural contract intact.
inline BackboneConfig desk_config() {
  BackboneConfig c;
  c.hidden_dim = 128;
  c.num_layers = 4;
  c.num_heads = 4;
  c.scene_side = 224;
  c.patch = 14;  // 16x16 = 256 vision tokens
  c.head_side = 64;
  c.lora_rank = 16;
  c.lora_alpha = 32.0;
  return c;
}

// Production-scale values (Qwen3-VL-4B class backbone behind the shim).
// Stored for reference and config plumbing; never instantiated in tests.
inline BackboneConfig paper_scale_config() {
  BackboneConfig c;
  c.hidden_dim = 2560;
  c.num_layers = 36;
  c.num_heads = 20;
  c.scene_side = 448;
  c.patch = 14;
  c.head_side = 224;
  c.max_context = 32768;
  c.lora_rank = 16;
  c.lora_alpha = 32.0;
  return c;
}

// Small instance used by the synthetic overfit runs: short sequences and a
// narrow stack keep a full training run inside a single-core CPU budget.
inline BackboneConfig overfit_config() {
  BackboneConfig c;
  c.hidden_dim = 64;
  c.num_layers = 2;
  c.num_heads = 4;
  c.scene_side = 64;
  c.patch = 8;  // 8x8 = 64 vision tokens
  c.head_side = 32;
  c.ffn_mult = 2;
  c.max_context = 1024;
  c.lora_rank = 64;
  c.lora_alpha = 64.0;
  return c;
}

}  // namespace omnigf
