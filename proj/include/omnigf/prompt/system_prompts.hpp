#pragma once

#include <cstdint>
#include <string>

namespace omnigf {

// Versioned system prompt assets. These strings are part of the model
// contract: the tests pin their FNV-1a hashes, so any accidental edit fails
// loudly instead of silently retraining against a different prompt.

inline constexpr int kSystemPromptVersion = 1;

inline constexpr const char* kSystemPromptLocalize =
    "You are given an image with head bounding boxes for all people in the scene. Each person is "
    "identified as P0..PN with their head box given as {\"bbox_2d\": [x1, y1, x2, y2]} in "
    "coordinates [0, 999]. For each person, predict whether their gaze target is inside or "
    "outside the image. Output one JSON object per person. If the gaze target is inside, output "
    "{\"status\": \"inside\", \"point_2d\": [x, y]}. If outside, output {\"status\": "
    "\"outside\"}.";

inline constexpr const char* kSystemPromptSemantic =
    "You are given an image with head bounding boxes for all people in the scene. Each person is "
    "identified as P0..PN with their head box given as {\"bbox_2d\": [x1, y1, x2, y2]} in "
    "coordinates [0, 999]. For each person, predict whether their gaze target is inside or "
    "outside the image, and what they are looking at. Output one JSON object per person. If the "
    "gaze target is inside, output {\"status\": \"inside\", \"point_2d\": [x, y], \"category\": "
    "\"<object>\"}. If outside, output {\"status\": \"outside\"}.";

inline std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace omnigf
