#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnigf/scene/scene.hpp"

namespace omnigf {

// Canonical JSON-lines scene format. One object per line:
//   image:   relative path to a PPM raster, or "base64:<b64 of PPM bytes>"
//   width/height: image extent (used when the raster is not loadable)
//   persons: [{bbox:[x1,y1,x2,y2], status, points:[[x,y],...], category}]
//   pairs:   [{i, j, lah, laeo, sa}]
//   object_boxes: [[x1,y1,x2,y2], ...] normalized (optional)
// Unknown keys are ignored on load.

inline constexpr const char* kInlineImagePrefix = "base64:";

namespace detail {

[[noreturn]] inline void canonical_error(const std::string& path, int line,
                                         const std::string& field, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": field '" + field + "': " + what);
}

}  // namespace detail

inline nlohmann::json scene_to_json(const Scene& s, const std::string& image_value) {
  nlohmann::json j;
  j["image"] = image_value;
  j["width"] = s.width;
  j["height"] = s.height;
  nlohmann::json persons = nlohmann::json::array();
  for (const auto& p : s.persons) {
    nlohmann::json jp;
    jp["bbox"] = {p.head_box.x1, p.head_box.y1, p.head_box.x2, p.head_box.y2};
    jp["status"] = to_string(p.gaze_status);
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& t : p.targets) pts.push_back({t.x, t.y});
    jp["points"] = pts;
    if (p.category) jp["category"] = *p.category;
    persons.push_back(jp);
  }
  j["persons"] = persons;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [key, lab] : s.pair_labels) {
    pairs.push_back({{"i", key.first},
                     {"j", key.second},
                     {"lah", lab.lah},
                     {"laeo", lab.laeo},
                     {"sa", lab.sa}});
  }
  j["pairs"] = pairs;
  if (!s.object_boxes.empty()) {
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& b : s.object_boxes) obs.push_back({b.x1, b.y1, b.x2, b.y2});
    j["object_boxes"] = obs;
  }
  return j;
}

// Writes scenes as JSONL under `path`. Rasters go inline (base64 PPM) when
// inline_images is set, otherwise as sidecar .ppm files next to the JSONL.
inline void save_canonical(const std::vector<Scene>& scenes, const std::string& path,
                           bool inline_images = true) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  const std::string stem = std::filesystem::path(path).stem().string();
  int idx = 0;
  for (const auto& s : scenes) {
    std::string image_value;
    if (s.image.empty()) {
      image_value = s.image_ref;
    } else if (inline_images) {
      image_value = std::string(kInlineImagePrefix) + base64_encode(encode_ppm(s.image));
    } else {
      const std::string name = stem + "_" + std::to_string(idx) + ".ppm";
      write_ppm((dir / name).string(), s.image);
      image_value = name;
    }
    f << scene_to_json(s, image_value).dump() << "\n";
    ++idx;
  }
}

inline Scene scene_from_json(const nlohmann::json& j, const std::string& path, int line_no,
                             const std::filesystem::path& base_dir) {
  using detail::canonical_error;
  Scene s;
  if (!j.contains("image") || !j["image"].is_string())
    canonical_error(path, line_no, "image", "missing or not a string");
  const std::string image_value = j["image"].get<std::string>();
  if (image_value.rfind(kInlineImagePrefix, 0) == 0) {
    const auto bytes = base64_decode(image_value.substr(std::strlen(kInlineImagePrefix)));
    s.image = decode_ppm(bytes.data(), bytes.size());
    s.width = s.image.w;
    s.height = s.image.h;
    s.image_ref = image_value;
  } else {
    s.image_ref = image_value;
    const auto file = base_dir / image_value;
    if (std::filesystem::exists(file)) {
      s.image = read_ppm(file.string());
      s.width = s.image.w;
      s.height = s.image.h;
    }
  }
  if (j.contains("width")) s.width = j["width"].get<int>();
  if (j.contains("height")) s.height = j["height"].get<int>();
  if (s.width < 1 || s.height < 1)
    canonical_error(path, line_no, "width/height", "unknown image extent");

  if (!j.contains("persons") || !j["persons"].is_array())
    canonical_error(path, line_no, "persons", "missing or not an array");
  for (const auto& jp : j["persons"]) {
    PersonAnnotation p;
    if (!jp.contains("bbox") || jp["bbox"].size() != 4)
      canonical_error(path, line_no, "bbox", "expected [x1,y1,x2,y2]");
    p.head_box = {jp["bbox"][0].get<double>(), jp["bbox"][1].get<double>(),
                  jp["bbox"][2].get<double>(), jp["bbox"][3].get<double>()};
    if (!jp.contains("status") || !jp["status"].is_string())
      canonical_error(path, line_no, "status", "missing or not a string");
    try {
      p.gaze_status = gaze_status_from(jp["status"].get<std::string>());
    } catch (const std::exception& e) {
      canonical_error(path, line_no, "status", e.what());
    }
    if (jp.contains("points")) {
      for (const auto& pt : jp["points"]) {
        if (pt.size() != 2) canonical_error(path, line_no, "points", "expected [x,y]");
        p.targets.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
    }
    if (jp.contains("category") && jp["category"].is_string())
      p.category = jp["category"].get<std::string>();
    s.persons.push_back(std::move(p));
  }

  const int n = static_cast<int>(s.persons.size());
  if (j.contains("pairs")) {
    for (const auto& pr : j["pairs"]) {
      if (!pr.contains("i") || !pr.contains("j"))
        canonical_error(path, line_no, "pairs", "missing i/j");
      const int i = pr["i"].get<int>();
      const int k = pr["j"].get<int>();
      if (i < 0 || k < 0 || i >= n || k >= n || i == k)
        canonical_error(path, line_no, "pairs",
                        "pair (" + std::to_string(i) + "," + std::to_string(k) +
                            ") out of range for " + std::to_string(n) + " persons");
      SocialLabel lab;
      lab.lah = pr.value("lah", false);
      lab.laeo = pr.value("laeo", false);
      lab.sa = pr.value("sa", false);
      s.pair_labels[{i, k}] = lab;
    }
  }
  if (j.contains("object_boxes")) {
    for (const auto& ob : j["object_boxes"]) {
      if (ob.size() != 4) canonical_error(path, line_no, "object_boxes", "expected [x1,y1,x2,y2]");
      s.object_boxes.push_back(
          {ob[0].get<double>(), ob[1].get<double>(), ob[2].get<double>(), ob[3].get<double>()});
    }
  }
  try {
    s.validate(false);
  } catch (const std::exception& e) {
    canonical_error(path, line_no, "scene", e.what());
  }
  return s;
}

inline std::vector<Scene> load_canonical(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::filesystem::path base_dir = std::filesystem::path(path).parent_path();
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      detail::canonical_error(path, line_no, "<json>", e.what());
    }
    scenes.push_back(scene_from_json(j, path, line_no, base_dir));
  }
  return scenes;
}

}  // namespace omnigf
