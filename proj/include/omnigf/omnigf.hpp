#pragma once

// Umbrella header for the omnigf library.

#include "omnigf/core/autodiff.hpp"
#include "omnigf/core/image.hpp"
#include "omnigf/core/kernels.hpp"
#include "omnigf/core/nn.hpp"
#include "omnigf/core/rng.hpp"
#include "omnigf/core/tensor.hpp"
#include "omnigf/eval/evaluator.hpp"
#include "omnigf/eval/metrics.hpp"
#include "omnigf/model/backbone.hpp"
#include "omnigf/model/bundle.hpp"
#include "omnigf/model/config.hpp"
#include "omnigf/model/gaze_heads.hpp"
#include "omnigf/model/head_encoder.hpp"
#include "omnigf/prompt/prompt.hpp"
#include "omnigf/prompt/system_prompts.hpp"
#include "omnigf/prompt/tokenizer.hpp"
#include "omnigf/scene/adapters.hpp"
#include "omnigf/scene/canonical_io.hpp"
#include "omnigf/scene/scene.hpp"
#include "omnigf/scene/synthetic.hpp"
#include "omnigf/train/checkpoint.hpp"
#include "omnigf/train/config_io.hpp"
#include "omnigf/train/objectives.hpp"
#include "omnigf/train/optimizer.hpp"
#include "omnigf/train/trainer.hpp"
