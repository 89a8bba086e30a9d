#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "omnigf/core/rng.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

// Synthetic desk-scale scenes. Each person is a solid head block whose border
// hue encodes the gaze direction theta; the target lies on the ray from the
// head center at a sampled distance. Targets that land inside another head
// are labeled "person" (no marker drawn, the head is the object); other
// targets get a small marker block whose fill color names the category.
// Pixels -> labels is exactly invertible, so a small model can learn every
// task from appearance alone.

struct PaletteEntry {
  std::string name;
  float r, g, b;  // exact multiples of 1/255 so rasters survive 8-bit round trips
};

struct SynthConfig {
  int side = 64;               // square image side in pixels
  int persons_min = 2;
  int persons_max = 2;
  int head_px = 14;            // head block side
  int border_px = 3;           // hue border thickness
  int marker_px = 6;           // target marker side
  double dist_min = 0.18;      // normalized target distance along the ray
  double dist_max = 0.55;
  double eps_sa = 0.05;        // shared-attention distance threshold (normalized)
  double p_sa = 0.25;          // first pair constructed as shared attention
  double p_laeo = 0.20;        // first pair constructed as mutual gaze
  double p_lah = 0.15;         // person 0 aimed at person 1's head
  double unknown_prob = 0.0;   // chance a person carries no gaze annotation
  std::vector<PaletteEntry> palette = {
      {"red", 255.f / 255, 0, 0},         {"green", 0, 204.f / 255, 0},
      {"blue", 51.f / 255, 51.f / 255, 255.f / 255}, {"yellow", 255.f / 255, 216.f / 255, 0},
      {"magenta", 229.f / 255, 0, 229.f / 255},      {"cyan", 0, 216.f / 255, 216.f / 255},
  };
};

// Per-person generation truth that is not part of the data model (used by
// invariant tests): the sampled direction and distance.
struct SynthDebug {
  std::vector<double> theta;
  std::vector<double> dist;
};

namespace detail {

inline bool point_in_box_norm(const Point& p, const Box& b, int w, int h) {
  return p.x >= b.x1 / w && p.x <= b.x2 / w && p.y >= b.y1 / h && p.y <= b.y2 / h;
}

inline void quantize_raster(Raster& img) {
  for (auto& v : img.rgb) v = static_cast<float>(to_byte(v)) / 255.f;
}

}  // namespace detail

// LAH(i,j): i's target lies inside j's head box. LAEO: mutual LAH.
// SA: both targets within eps_sa of each other on the unit square.
inline SocialLabel derive_pair_label(const Scene& s, int i, int j, double eps_sa) {
  const auto& pi = s.persons[static_cast<size_t>(i)];
  const auto& pj = s.persons[static_cast<size_t>(j)];
  SocialLabel lab;
  if (pi.gaze_status == GazeStatus::Inside)
    lab.lah = detail::point_in_box_norm(pi.targets[0], pj.head_box, s.width, s.height);
  bool lah_ji = false;
  if (pj.gaze_status == GazeStatus::Inside)
    lah_ji = detail::point_in_box_norm(pj.targets[0], pi.head_box, s.width, s.height);
  lab.laeo = lab.lah && lah_ji;
  if (pi.gaze_status == GazeStatus::Inside && pj.gaze_status == GazeStatus::Inside) {
    const double dx = pi.targets[0].x - pj.targets[0].x;
    const double dy = pi.targets[0].y - pj.targets[0].y;
    lab.sa = std::sqrt(dx * dx + dy * dy) < eps_sa;
  }
  return lab;
}

inline Scene generate_synthetic_scene(std::uint64_t seed, const SynthConfig& cfg,
                                      SynthDebug* debug = nullptr) {
  if (cfg.head_px + 2 > cfg.side)
    throw std::invalid_argument("synth: head larger than image");
  if (cfg.palette.empty()) throw std::invalid_argument("synth: empty palette");

  Rng rng(seed);
  Rng layout = rng.split(1);
  Rng gaze = rng.split(2);
  Rng colors = rng.split(3);

  Scene scene;
  scene.width = scene.height = cfg.side;
  scene.image = Raster(cfg.side, cfg.side);
  scene.image.fill(30.f / 255, 30.f / 255, 36.f / 255);

  const int n = layout.uniform_int(cfg.persons_min, cfg.persons_max);
  const int margin = 1;

  // Place non-overlapping integer-aligned head boxes.
  std::vector<Box> boxes;
  for (int i = 0; i < n; ++i) {
    Box b;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const int x = layout.uniform_int(margin, cfg.side - cfg.head_px - margin);
      const int y = layout.uniform_int(margin, cfg.side - cfg.head_px - margin);
      b = {static_cast<double>(x), static_cast<double>(y),
           static_cast<double>(x + cfg.head_px), static_cast<double>(y + cfg.head_px)};
      placed = true;
      for (const Box& o : boxes) {
        const double gap = cfg.marker_px + 2;
        if (b.x1 < o.x2 + gap && o.x1 < b.x2 + gap && b.y1 < o.y2 + gap && o.y1 < b.y2 + gap) {
          placed = false;
          break;
        }
      }
    }
    boxes.push_back(b);  // after 200 tries accept overlap rather than diverge
  }

  struct Plan {
    GazeStatus status = GazeStatus::Outside;
    double theta = 0, dist = 0;
    Point target;
    bool target_is_person = false;
  };
  std::vector<Plan> plans(static_cast<size_t>(n));

  auto center_norm = [&](int i) {
    return Point{boxes[static_cast<size_t>(i)].cx() / cfg.side,
                 boxes[static_cast<size_t>(i)].cy() / cfg.side};
  };
  auto aim_at = [&](int i, Point t, Plan& p) {
    const Point c = center_norm(i);
    p.theta = std::atan2(t.y - c.y, t.x - c.x);
    if (p.theta < 0) p.theta += 6.283185307179586477;
    p.dist = std::hypot(t.x - c.x, t.y - c.y);
    p.target = t;
    p.status = GazeStatus::Inside;
  };
  auto sample_free = [&](int i, Plan& p) {
    const Point c = center_norm(i);
    p.theta = gaze.uniform(0.0, 6.283185307179586477);
    p.dist = gaze.uniform(cfg.dist_min, cfg.dist_max);
    p.target = {c.x + p.dist * std::cos(p.theta), c.y + p.dist * std::sin(p.theta)};
    const bool inside =
        p.target.x >= 0.0 && p.target.x < 1.0 && p.target.y >= 0.0 && p.target.y < 1.0;
    p.status = inside ? GazeStatus::Inside : GazeStatus::Outside;
  };
  auto sample_inside = [&](int i, Plan& p) {
    for (int t = 0; t < 64; ++t) {
      sample_free(i, p);
      if (p.status == GazeStatus::Inside) return;
    }
    aim_at(i, {0.5, 0.5}, p);
  };

  // Social construction for the first pair; everyone else gazes freely.
  int constructed = 0;
  if (n >= 2) {
    const double roll = gaze.uniform();
    if (roll < cfg.p_sa) {
      Plan shared;
      sample_inside(0, shared);
      aim_at(0, shared.target, plans[0]);
      aim_at(1, shared.target, plans[1]);
      constructed = 2;
    } else if (roll < cfg.p_sa + cfg.p_laeo) {
      aim_at(0, center_norm(1), plans[0]);
      aim_at(1, center_norm(0), plans[1]);
      constructed = 2;
    } else if (roll < cfg.p_sa + cfg.p_laeo + cfg.p_lah) {
      aim_at(0, center_norm(1), plans[0]);
      sample_free(1, plans[1]);
      constructed = 2;
    }
  }
  for (int i = constructed; i < n; ++i) sample_free(i, plans[i]);
  for (int i = 0; i < n; ++i) {
    if (gaze.bernoulli(cfg.unknown_prob)) {
      plans[static_cast<size_t>(i)].status = GazeStatus::Unknown;
      plans[static_cast<size_t>(i)].target = {};
    }
  }

  // Mark targets that land inside someone's head: the object is that person.
  for (int i = 0; i < n; ++i) {
    Plan& p = plans[static_cast<size_t>(i)];
    if (p.status != GazeStatus::Inside) continue;
    for (int j = 0; j < n; ++j) {
      if (detail::point_in_box_norm(p.target, boxes[static_cast<size_t>(j)], cfg.side, cfg.side)) {
        p.target_is_person = true;
        break;
      }
    }
  }

  // Render heads: skin fill with a hue-coded border ring.
  for (int i = 0; i < n; ++i) {
    const Box& b = boxes[static_cast<size_t>(i)];
    const Plan& p = plans[static_cast<size_t>(i)];
    float r, g, bb;
    hsv_to_rgb(p.theta / 6.283185307179586477, 1.0, 1.0, r, g, bb);
    scene.image.fill_rect(static_cast<int>(b.y1), static_cast<int>(b.x1), static_cast<int>(b.y2),
                          static_cast<int>(b.x2), r, g, bb);
    const int t = cfg.border_px;
    scene.image.fill_rect(static_cast<int>(b.y1) + t, static_cast<int>(b.x1) + t,
                          static_cast<int>(b.y2) - t, static_cast<int>(b.x2) - t, 220.f / 255,
                          190.f / 255, 160.f / 255);
  }

  // Render object markers and assemble annotations.
  SynthDebug dbg;
  for (int i = 0; i < n; ++i) {
    const Plan& p = plans[static_cast<size_t>(i)];
    PersonAnnotation person;
    person.head_box = boxes[static_cast<size_t>(i)];
    person.gaze_status = p.status;
    if (p.status == GazeStatus::Inside) {
      person.targets.push_back(p.target);
      if (p.target_is_person) {
        person.category = "person";
      } else {
        const auto& pal =
            cfg.palette[static_cast<size_t>(colors.uniform_int(0, static_cast<int>(cfg.palette.size()) - 1))];
        person.category = pal.name;
        const int px = static_cast<int>(std::floor(p.target.x * cfg.side));
        const int py = static_cast<int>(std::floor(p.target.y * cfg.side));
        const int hs = cfg.marker_px / 2;
        // Markers never overwrite head pixels; heads stay decodable.
        for (int y = std::max(0, py - hs); y < std::min(cfg.side, py - hs + cfg.marker_px); ++y)
          for (int x = std::max(0, px - hs); x < std::min(cfg.side, px - hs + cfg.marker_px); ++x) {
            bool in_head = false;
            for (const Box& hb : boxes)
              if (x >= hb.x1 && x < hb.x2 && y >= hb.y1 && y < hb.y2) {
                in_head = true;
                break;
              }
            if (!in_head) scene.image.set(y, x, pal.r, pal.g, pal.b);
          }
      }
    }
    scene.persons.push_back(std::move(person));
    dbg.theta.push_back(p.theta);
    dbg.dist.push_back(p.dist);
  }

  // Derive pair labels from final geometry over ordered pairs of annotated persons.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (plans[static_cast<size_t>(i)].status == GazeStatus::Unknown ||
          plans[static_cast<size_t>(j)].status == GazeStatus::Unknown)
        continue;
      scene.pair_labels[{i, j}] = derive_pair_label(scene, i, j, cfg.eps_sa);
    }

  detail::quantize_raster(scene.image);
  scene.image_ref = "synthetic/" + std::to_string(seed);
  scene.validate(true);
  if (debug) *debug = std::move(dbg);
  return scene;
}

// Reads the hue border of person i back off the raster and returns the
// encoded direction in radians.
inline double decode_head_angle(const Scene& scene, int i) {
  const Box& b = scene.persons[static_cast<size_t>(i)].head_box;
  const float* p = scene.image.px(static_cast<int>(b.y1), static_cast<int>(b.x1));
  return rgb_to_hue(p[0], p[1], p[2]) * 6.283185307179586477;
}

}  // namespace omnigf
