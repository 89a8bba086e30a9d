#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omnigf {

// HWC float RGB raster, values in [0,1].
struct Raster {
  int h = 0, w = 0;
  std::vector<float> rgb;  // h*w*3

  Raster() = default;
  Raster(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0.f) {}

  bool empty() const { return h == 0 || w == 0; }
  float* px(int y, int x) { return &rgb[(static_cast<size_t>(y) * w + x) * 3]; }
  const float* px(int y, int x) const { return &rgb[(static_cast<size_t>(y) * w + x) * 3]; }

  void set(int y, int x, float r, float g, float b) {
    float* p = px(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  void fill(float r, float g, float b) {
    for (size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = r;
      rgb[i + 1] = g;
      rgb[i + 2] = b;
    }
  }

  void fill_rect(int y0, int x0, int y1, int x1, float r, float g, float b) {
    y0 = std::max(0, y0);
    x0 = std::max(0, x0);
    y1 = std::min(h, y1);
    x1 = std::min(w, x1);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(y, x, r, g, b);
  }
};

// ---- 8-bit quantization and PPM (binary P6) ----

inline std::uint8_t to_byte(float v) {
  const float c = std::min(1.f, std::max(0.f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

inline std::vector<std::uint8_t> encode_ppm(const Raster& img) {
  std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.rgb.size());
  for (float v : img.rgb) out.push_back(to_byte(v));
  return out;
}

inline Raster decode_ppm(const std::uint8_t* data, size_t len) {
  std::string s(reinterpret_cast<const char*>(data), len);
  std::istringstream in(s);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("ppm: bad magic");
  // Skip comments between tokens.
  auto next_int = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return std::stoi(tok);
    }
    throw std::runtime_error("ppm: truncated header");
  };
  w = next_int();
  h = next_int();
  maxval = next_int();
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 supported");
  const std::streamoff off = in.tellg() + std::streamoff(1);  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (len < static_cast<size_t>(off) + need) throw std::runtime_error("ppm: truncated pixel data");
  Raster img(h, w);
  const std::uint8_t* p = data + off;
  for (size_t i = 0; i < need; ++i) img.rgb[i] = static_cast<float>(p[i]) / 255.f;
  return img;
}

inline void write_ppm(const std::string& path, const Raster& img) {
  auto bytes = encode_ppm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

inline Raster read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_ppm(bytes.data(), bytes.size());
}

// ---- base64 ----

inline std::string base64_encode(const std::vector<std::uint8_t>& in) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
  }
  if (i + 1 == in.size()) {
    const std::uint32_t v = in[i] << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == in.size()) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = val(c);
    if (v < 0) throw std::runtime_error("base64: invalid character");
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buf >> bits) & 0xff));
    }
  }
  return out;
}

// ---- color / geometry helpers ----

// hue in [0,1), s,v in [0,1].
inline void hsv_to_rgb(double hue, double s, double v, float& r, float& g, float& b) {
  const double h6 = hue * 6.0;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double rr = 0, gg = 0, bb = 0;
  switch (i) {
    case 0: rr = v; gg = t; bb = p; break;
    case 1: rr = q; gg = v; bb = p; break;
    case 2: rr = p; gg = v; bb = t; break;
    case 3: rr = p; gg = q; bb = v; break;
    case 4: rr = t; gg = p; bb = v; break;
    default: rr = v; gg = p; bb = q; break;
  }
  r = static_cast<float>(rr);
  g = static_cast<float>(gg);
  b = static_cast<float>(bb);
}

// Returns hue in [0,1); 0 for achromatic input.
inline double rgb_to_hue(float r, float g, float b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 1e-9) return 0.0;
  double h;
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
  return h;
}

// Deterministic bilinear resize.
inline Raster resize_bilinear(const Raster& src, int oh, int ow) {
  if (src.empty()) throw std::invalid_argument("resize: empty source");
  Raster out(oh, ow);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.h - 1);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < ow; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.w - 1);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = src.px(y0, x0)[c] * (1 - wx) + src.px(y0, x1)[c] * wx;
        const double bot = src.px(y1, x0)[c] * (1 - wx) + src.px(y1, x1)[c] * wx;
        out.px(y, x)[c] = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace omnigf
