#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnigf/prompt/system_prompts.hpp"
#include "omnigf/prompt/tokenizer.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

enum class TaskMode { Localize, LocalizeSemantic };

inline const char* to_string(TaskMode m) {
  return m == TaskMode::Localize ? "localize" : "localize+semantic";
}

// Coordinates are scaled per axis to a 1000-step grid and clamped to the
// integer range the prompt promises: [0, 999].
inline int to_grid_coord(double v, double extent) {
  const long g = std::lround(v * 1000.0 / extent);
  return static_cast<int>(std::clamp(g, 0L, 999L));
}

inline int to_grid_point(double normalized) {
  const long g = std::lround(normalized * 1000.0);
  return static_cast<int>(std::clamp(g, 0L, 999L));
}

struct PromptPlan {
  std::vector<int> token_ids;
  std::vector<int> gaze_pad_index;                  // g_i, one per person, strictly increasing
  std::vector<std::pair<int, int>> person_slot_spans;  // token span of each person entry
  TaskMode task_mode = TaskMode::Localize;
};

inline std::string person_entry_text(const Scene& scene, int i) {
  const auto& p = scene.persons[static_cast<size_t>(i)];
  const Box b = p.head_box.clamped(scene.width, scene.height);
  std::string s = "P" + std::to_string(i) + ": ";
  s += Tokenizer::kGazePadText;
  s += " {\"bbox_2d\": [" + std::to_string(to_grid_coord(b.x1, scene.width)) + ", " +
       std::to_string(to_grid_coord(b.y1, scene.height)) + ", " +
       std::to_string(to_grid_coord(b.x2, scene.width)) + ", " +
       std::to_string(to_grid_coord(b.y2, scene.height)) + "]}";
  return s;
}

inline PromptPlan build_prompt(const Scene& scene, TaskMode mode) {
  if (scene.persons.empty()) throw std::invalid_argument("build_prompt: scene has no persons");
  PromptPlan plan;
  plan.task_mode = mode;
  std::string text =
      (mode == TaskMode::Localize ? kSystemPromptLocalize : kSystemPromptSemantic);
  text += "\n";
  plan.token_ids = Tokenizer::encode(text);
  for (int i = 0; i < static_cast<int>(scene.persons.size()); ++i) {
    const int start = static_cast<int>(plan.token_ids.size());
    const auto entry = Tokenizer::encode(person_entry_text(scene, i) + "\n");
    for (size_t t = 0; t < entry.size(); ++t) {
      if (entry[t] == Tokenizer::kGazePadId)
        plan.gaze_pad_index.push_back(start + static_cast<int>(t));
      plan.token_ids.push_back(entry[t]);
    }
    plan.person_slot_spans.push_back({start, static_cast<int>(plan.token_ids.size())});
  }
  if (plan.gaze_pad_index.size() != scene.persons.size())
    throw std::logic_error("build_prompt: placeholder count mismatch");
  return plan;
}

// ---- target serialization (training) ----

inline std::string person_target_text(const PersonAnnotation& p, TaskMode mode, int index) {
  std::string s = "P" + std::to_string(index) + ": ";
  if (p.gaze_status == GazeStatus::Inside) {
    if (p.targets.empty())
      throw std::invalid_argument("serialize_targets: inside person without target");
    const int gx = to_grid_point(p.targets[0].x);
    const int gy = to_grid_point(p.targets[0].y);
    s += "{\"status\": \"inside\", \"point_2d\": [" + std::to_string(gx) + ", " +
         std::to_string(gy) + "]";
    if (mode == TaskMode::LocalizeSemantic && p.category)
      s += ", \"category\": \"" + *p.category + "\"";
    s += "}";
  } else {
    // Outside persons and the fully-masked dummy record for unknown persons.
    s += "{\"status\": \"outside\"}";
  }
  return s;
}

struct TargetEncoding {
  std::vector<int> token_ids;       // target text tokens (no EOS)
  std::vector<double> loss_mask;    // one weight per target token; sum equals the
                                    // token count of non-unknown persons
  double eos_weight = 1.0;          // supervision of the closing EOS transition;
                                    // zero when every person is unknown
  std::vector<int> anchor_offsets;  // per person: offset of its opening 'P' token
  std::vector<std::pair<int, int>> person_spans;  // token span of each person block
};

inline TargetEncoding serialize_targets(const Scene& scene, TaskMode mode) {
  TargetEncoding enc;
  bool any_known = false;
  for (int i = 0; i < static_cast<int>(scene.persons.size()); ++i) {
    const auto& p = scene.persons[static_cast<size_t>(i)];
    const int start = static_cast<int>(enc.token_ids.size());
    enc.anchor_offsets.push_back(start);
    const auto ids = Tokenizer::encode(person_target_text(p, mode, i) + "\n");
    const double w = p.gaze_status == GazeStatus::Unknown ? 0.0 : 1.0;
    any_known = any_known || w != 0.0;
    for (int id : ids) {
      enc.token_ids.push_back(id);
      enc.loss_mask.push_back(w);
    }
    enc.person_spans.push_back({start, static_cast<int>(enc.token_ids.size())});
  }
  enc.eos_weight = any_known ? 1.0 : 0.0;
  return enc;
}

// Per-position weights over [target tokens; EOS], the sequence the trainer
// actually supervises.
template <class T>
std::vector<T> supervision_weights(const TargetEncoding& enc) {
  std::vector<T> w(enc.loss_mask.begin(), enc.loss_mask.end());
  w.push_back(static_cast<T>(enc.eos_weight));
  return w;
}

// ---- generated output parsing (inference) ----

struct PersonOutputRecord {
  int person_index = -1;            // k from the "P<k>:" header
  GazeStatus status = GazeStatus::Outside;  // never Unknown
  std::optional<Point> point;       // decoded as (x/1000, y/1000) exactly
  std::optional<std::string> category;
  int anchor_index = -1;            // position of the opening 'P' token in the text
  bool valid = true;
  std::string note;
};

// Splits generated text on "P<k>:" headers and parses each block. Malformed
// blocks degrade to invalid records; parsing never throws on model output.
inline std::vector<PersonOutputRecord> parse_output(const std::string& text) {
  struct Header {
    size_t pos;
    int index;
    size_t body_start;
  };
  std::vector<Header> headers;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] != 'P') continue;
    if (i > 0 && (std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '_'))
      continue;
    size_t j = i + 1;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i + 1 || j >= text.size() || text[j] != ':') continue;
    headers.push_back({i, std::stoi(text.substr(i + 1, j - i - 1)), j + 1});
  }

  std::vector<PersonOutputRecord> records;
  for (size_t h = 0; h < headers.size(); ++h) {
    const size_t body_end = (h + 1 < headers.size()) ? headers[h + 1].pos : text.size();
    PersonOutputRecord rec;
    rec.person_index = headers[h].index;
    rec.anchor_index = static_cast<int>(headers[h].pos);
    const std::string body =
        text.substr(headers[h].body_start, body_end - headers[h].body_start);
    try {
      const auto j = nlohmann::json::parse(body);
      const std::string status = j.at("status").get<std::string>();
      if (status == "inside") {
        rec.status = GazeStatus::Inside;
        if (j.contains("point_2d") && j["point_2d"].is_array() && j["point_2d"].size() == 2) {
          rec.point = Point{j["point_2d"][0].get<double>() / 1000.0,
                            j["point_2d"][1].get<double>() / 1000.0};
        }
        if (j.contains("category") && j["category"].is_string())
          rec.category = j["category"].get<std::string>();
      } else if (status == "outside") {
        rec.status = GazeStatus::Outside;
      } else {
        rec.valid = false;
        rec.status = GazeStatus::Outside;
        rec.note = "unrecognized status '" + status + "'";
      }
    } catch (const std::exception& e) {
      rec.valid = false;
      rec.status = GazeStatus::Outside;
      rec.note = e.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// Renders records back to the schema text (inverse of parse_output on valid
// records); used by round-trip property tests and the dummy-target builder.
inline std::string render_records(const std::vector<PersonOutputRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    std::string s = "P" + std::to_string(r.person_index) + ": ";
    if (r.status == GazeStatus::Inside) {
      s += "{\"status\": \"inside\"";
      if (r.point)
        s += ", \"point_2d\": [" + std::to_string(to_grid_point(r.point->x)) + ", " +
             std::to_string(to_grid_point(r.point->y)) + "]";
      if (r.category) s += ", \"category\": \"" + *r.category + "\"";
      s += "}";
    } else {
      s += "{\"status\": \"outside\"}";
    }
    out += s + "\n";
  }
  return out;
}

}  // namespace omnigf
