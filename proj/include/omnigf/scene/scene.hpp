#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnigf/core/image.hpp"

namespace omnigf {

enum class GazeStatus { Inside, Outside, Unknown };

inline const char* to_string(GazeStatus s) {
  switch (s) {
    case GazeStatus::Inside: return "inside";
    case GazeStatus::Outside: return "outside";
    case GazeStatus::Unknown: return "unknown";
  }
  return "?";
}

inline GazeStatus gaze_status_from(const std::string& s) {
  if (s == "inside") return GazeStatus::Inside;
  if (s == "outside") return GazeStatus::Outside;
  if (s == "unknown") return GazeStatus::Unknown;
  throw std::invalid_argument("unknown gaze status: " + s);
}

// Axis-aligned box in absolute pixels.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x1 < x2 && y1 < y2; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return (x1 + x2) / 2; }
  double cy() const { return (y1 + y2) / 2; }

  Box clamped(double w, double h) const {
    auto cl = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
    return {cl(x1, 0, w), cl(y1, 0, h), cl(x2, 0, w), cl(y2, 0, h)};
  }
};

// Gaze target point, normalized to the unit square.
struct Point {
  double x = 0, y = 0;
};

struct PersonAnnotation {
  Box head_box;                       // absolute pixels
  GazeStatus gaze_status = GazeStatus::Outside;
  std::vector<Point> targets;         // normalized; non-empty iff status == inside
  std::optional<std::string> category;

  void validate() const {
    if (!head_box.valid()) throw std::invalid_argument("person: degenerate head box");
    if (gaze_status == GazeStatus::Inside && targets.empty())
      throw std::invalid_argument("person: inside status requires at least one target");
    if (gaze_status != GazeStatus::Inside && !targets.empty())
      throw std::invalid_argument("person: non-inside status must have no targets");
  }
};

struct SocialLabel {
  bool lah = false;
  bool laeo = false;
  bool sa = false;
};

using PairKey = std::pair<int, int>;  // ordered (i, j), i != j

struct Scene {
  int width = 0, height = 0;
  Raster image;                 // may be empty for adapter output (annotations only)
  std::string image_ref;        // relative path or identifier of the source image
  std::vector<PersonAnnotation> persons;
  std::map<PairKey, SocialLabel> pair_labels;
  std::vector<Box> object_boxes;  // normalized target-object boxes (GazeHOI metadata)

  void validate(bool require_raster = false) const {
    if (width < 1 || height < 1) throw std::invalid_argument("scene: empty extent");
    if (require_raster && image.empty()) throw std::invalid_argument("scene: raster required");
    if (!image.empty() && (image.h != height || image.w != width))
      throw std::invalid_argument("scene: raster/extent mismatch");
    for (const auto& p : persons) {
      p.validate();
      const Box cb = p.head_box.clamped(width, height);
      if (!cb.valid()) throw std::invalid_argument("scene: head box outside image bounds");
    }
    const int n = static_cast<int>(persons.size());
    for (const auto& [key, lab] : pair_labels) {
      (void)lab;
      if (key.first == key.second || key.first < 0 || key.second < 0 || key.first >= n ||
          key.second >= n)
        throw std::invalid_argument("scene: pair index out of range");
    }
  }
};

}  // namespace omnigf
