#pragma once

#include "omnigf/model/backbone.hpp"
#include "omnigf/model/gaze_heads.hpp"
#include "omnigf/model/head_encoder.hpp"

namespace omnigf {

// Backbone + head encoder + gaze heads sharing one parameter registry. All
// initial tensors are a pure function of the backbone config (init_seed), so
// checkpoints only need to carry the trainable groups.
template <class T>
struct ModelBundle {
  TinyBackbone<T> backbone;
  HeadEncoder<T> head_encoder;
  GazeHeads<T> heads;

  explicit ModelBundle(const BackboneConfig& cfg)
      : backbone(cfg),
        head_encoder(backbone.registry(), cfg.hidden_dim, Rng(cfg.init_seed).split(9001)),
        heads(backbone.registry(), cfg, Rng(cfg.init_seed).split(9002)) {}

  ParamRegistry<T>& registry() { return backbone.registry(); }
  const ParamRegistry<T>& registry() const { return backbone.registry(); }
  const BackboneConfig& config() const { return backbone.config(); }
};

}  // namespace omnigf
