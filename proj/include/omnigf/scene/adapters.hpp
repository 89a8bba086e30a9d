#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "omnigf/scene/scene.hpp"

namespace omnigf {

// Adapters from benchmark annotation layouts to canonical Scenes. Annotations
// are CSV with a header row; the expected columns per layout are documented
// in the README. Images themselves are not shipped with the benchmarks here,
// so adapter output carries annotations plus the image reference; rasters are
// attached later if the files exist.
//
// Shared columns: image,width,height,person,x1,y1,x2,y2 (head box in pixels;
// gaze points normalized to [0,1]).

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require(const std::string& name, const std::string& path) const {
    const int c = col(name);
    if (c < 0) throw std::runtime_error(path + ": missing required column '" + name + "'");
    return c;
  }
};

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

inline double to_d(const std::string& s) { return s.empty() ? 0.0 : std::stod(s); }

}  // namespace detail

enum class BenchmarkLayout { GazeFollow, VideoAttentionTarget, ChildPlay, GazeHoi, VsGaze };

inline BenchmarkLayout benchmark_layout_from(const std::string& name) {
  if (name == "gazefollow") return BenchmarkLayout::GazeFollow;
  if (name == "videoattentiontarget") return BenchmarkLayout::VideoAttentionTarget;
  if (name == "childplay") return BenchmarkLayout::ChildPlay;
  if (name == "gazehoi") return BenchmarkLayout::GazeHoi;
  if (name == "vsgaze") return BenchmarkLayout::VsGaze;
  throw std::invalid_argument("unknown benchmark layout: " + name);
}

inline std::vector<Scene> adapt_benchmark(const std::string& layout_name, const std::string& path) {
  const BenchmarkLayout layout = benchmark_layout_from(layout_name);
  const auto table = detail::read_csv(path);

  const int c_image = table.require("image", path);
  const int c_w = table.require("width", path);
  const int c_h = table.require("height", path);
  const int c_person = table.require("person", path);
  const int c_x1 = table.require("x1", path);
  const int c_y1 = table.require("y1", path);
  const int c_x2 = table.require("x2", path);
  const int c_y2 = table.require("y2", path);
  int c_gx = -1, c_gy = -1, c_inout = -1, c_state = -1, c_annot = -1, c_cat = -1;
  int c_ox1 = -1, c_oy1 = -1, c_ox2 = -1, c_oy2 = -1;
  switch (layout) {
    case BenchmarkLayout::GazeFollow:
      c_gx = table.require("gaze_x", path);
      c_gy = table.require("gaze_y", path);
      c_cat = table.col("category");
      break;
    case BenchmarkLayout::VideoAttentionTarget:
      c_gx = table.require("gaze_x", path);
      c_gy = table.require("gaze_y", path);
      c_inout = table.require("inout", path);
      break;
    case BenchmarkLayout::ChildPlay:
      c_gx = table.require("gaze_x", path);
      c_gy = table.require("gaze_y", path);
      c_state = table.require("state", path);
      break;
    case BenchmarkLayout::GazeHoi:
      c_gx = table.require("gaze_x", path);
      c_gy = table.require("gaze_y", path);
      c_ox1 = table.require("obj_x1", path);
      c_oy1 = table.require("obj_y1", path);
      c_ox2 = table.require("obj_x2", path);
      c_oy2 = table.require("obj_y2", path);
      c_cat = table.require("category", path);
      break;
    case BenchmarkLayout::VsGaze:
      c_gx = table.require("gaze_x", path);
      c_gy = table.require("gaze_y", path);
      c_annot = table.require("annotated", path);
      c_inout = table.require("inout", path);
      break;
  }

  // Group rows into scenes by image, preserving first-appearance order; within
  // a scene, persons keep source file order (GazeFollow repeats a person row
  // once per annotator and those collapse onto one person).
  std::vector<Scene> scenes;
  std::map<std::string, size_t> scene_index;
  std::map<std::pair<std::string, std::string>, size_t> person_index;
  for (const auto& row : table.rows) {
    const std::string& img = row[static_cast<size_t>(c_image)];
    if (!scene_index.count(img)) {
      Scene s;
      s.image_ref = img;
      s.width = static_cast<int>(detail::to_d(row[static_cast<size_t>(c_w)]));
      s.height = static_cast<int>(detail::to_d(row[static_cast<size_t>(c_h)]));
      scene_index[img] = scenes.size();
      scenes.push_back(std::move(s));
    }
    Scene& s = scenes[scene_index[img]];
    const std::string& pid = row[static_cast<size_t>(c_person)];
    const auto pkey = std::make_pair(img, pid);

    const Point gaze{detail::to_d(row[static_cast<size_t>(c_gx)]),
                     detail::to_d(row[static_cast<size_t>(c_gy)])};

    if (person_index.count(pkey)) {
      // Another annotator for an existing person (GazeFollow test layout).
      PersonAnnotation& p = s.persons[person_index[pkey]];
      if (p.gaze_status == GazeStatus::Inside) p.targets.push_back(gaze);
      continue;
    }

    PersonAnnotation p;
    p.head_box = {detail::to_d(row[static_cast<size_t>(c_x1)]),
                  detail::to_d(row[static_cast<size_t>(c_y1)]),
                  detail::to_d(row[static_cast<size_t>(c_x2)]),
                  detail::to_d(row[static_cast<size_t>(c_y2)])};
    switch (layout) {
      case BenchmarkLayout::GazeFollow:
        p.gaze_status = GazeStatus::Inside;
        p.targets.push_back(gaze);
        if (c_cat >= 0 && !row[static_cast<size_t>(c_cat)].empty())
          p.category = row[static_cast<size_t>(c_cat)];
        break;
      case BenchmarkLayout::VideoAttentionTarget:
        if (detail::to_d(row[static_cast<size_t>(c_inout)]) != 0.0) {
          p.gaze_status = GazeStatus::Inside;
          p.targets.push_back(gaze);
        } else {
          p.gaze_status = GazeStatus::Outside;
        }
        break;
      case BenchmarkLayout::ChildPlay: {
        const std::string& st = row[static_cast<size_t>(c_state)];
        if (st == "inside") {
          p.gaze_status = GazeStatus::Inside;
          p.targets.push_back(gaze);
        } else if (st == "outside") {
          p.gaze_status = GazeStatus::Outside;
        } else {
          // gaze shifts, closed eyes and other states carry no usable target
          p.gaze_status = GazeStatus::Unknown;
        }
        break;
      }
      case BenchmarkLayout::GazeHoi:
        p.gaze_status = GazeStatus::Inside;
        p.targets.push_back(gaze);
        p.category = row[static_cast<size_t>(c_cat)];
        s.object_boxes.push_back({detail::to_d(row[static_cast<size_t>(c_ox1)]),
                                  detail::to_d(row[static_cast<size_t>(c_oy1)]),
                                  detail::to_d(row[static_cast<size_t>(c_ox2)]),
                                  detail::to_d(row[static_cast<size_t>(c_oy2)])});
        break;
      case BenchmarkLayout::VsGaze:
        if (detail::to_d(row[static_cast<size_t>(c_annot)]) == 0.0) {
          p.gaze_status = GazeStatus::Unknown;
        } else if (detail::to_d(row[static_cast<size_t>(c_inout)]) != 0.0) {
          p.gaze_status = GazeStatus::Inside;
          p.targets.push_back(gaze);
        } else {
          p.gaze_status = GazeStatus::Outside;
        }
        break;
    }
    person_index[pkey] = s.persons.size();
    s.persons.push_back(std::move(p));
  }

  // VSGaze pair labels live in a sibling "<stem>.pairs.csv" file.
  if (layout == BenchmarkLayout::VsGaze) {
    std::filesystem::path pp(path);
    pp.replace_extension(".pairs.csv");
    if (std::filesystem::exists(pp)) {
      const auto pt = detail::read_csv(pp.string());
      const int pc_image = pt.require("image", pp.string());
      const int pc_i = pt.require("i", pp.string());
      const int pc_j = pt.require("j", pp.string());
      const int pc_lah = pt.require("lah", pp.string());
      const int pc_laeo = pt.require("laeo", pp.string());
      const int pc_sa = pt.require("sa", pp.string());
      for (const auto& row : pt.rows) {
        const std::string& img = row[static_cast<size_t>(pc_image)];
        if (!scene_index.count(img)) continue;
        Scene& s = scenes[scene_index[img]];
        SocialLabel lab;
        lab.lah = detail::to_d(row[static_cast<size_t>(pc_lah)]) != 0.0;
        lab.laeo = detail::to_d(row[static_cast<size_t>(pc_laeo)]) != 0.0;
        lab.sa = detail::to_d(row[static_cast<size_t>(pc_sa)]) != 0.0;
        s.pair_labels[{static_cast<int>(detail::to_d(row[static_cast<size_t>(pc_i)])),
                       static_cast<int>(detail::to_d(row[static_cast<size_t>(pc_j)]))}] = lab;
      }
    }
  }

  for (auto& s : scenes) s.validate(false);
  return scenes;
}

}  // namespace omnigf
