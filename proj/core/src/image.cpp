#include "nltrack/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "nltrack/common.hpp"

namespace nltrack {

LogLevel log_level() {
  static const LogLevel lvl = [] {
    const char* v = std::getenv("NLTRACK_LOG");
    if (!v) return LogLevel::kQuiet;
    const std::string s(v);
    if (s == "debug") return LogLevel::kDebug;
    if (s == "info") return LogLevel::kInfo;
    return LogLevel::kQuiet;
  }();
  return lvl;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[nltrack] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug)
    std::cerr << "[nltrack:debug] " << msg << "\n";
}

void save_ppm(const Image& img, const std::string& path) {
  require(img.width > 0 && img.height > 0, "save_ppm: empty image");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  require(out.good(), "save_ppm: short write to " + path);
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  require(magic == "P6", "load_ppm: " + path + " is not binary PPM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  require(in.good() && w > 0 && h > 0, "load_ppm: bad header in " + path);
  require(maxval == 255, "load_ppm: unsupported maxval in " + path);
  in.get();  // single whitespace after header
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  require(in.gcount() == static_cast<std::streamsize>(img.rgb.size()),
          "load_ppm: truncated payload in " + path);
  return img;
}

namespace {

constexpr double kPadValue = 127.0;

double sample_channel(const Image& frame, int x, int y, int c) {
  if (x < 0 || y < 0 || x >= frame.width || y >= frame.height)
    return kPadValue;
  return frame.px(x, y)[c];
}

}  // namespace

CropResult crop_resize(const Image& frame, double cx, double cy, double side,
                       int out_px) {
  require(frame.width > 0 && frame.height > 0, "crop_resize: empty frame");
  require(side > 0.0, "crop_resize: non-positive side");
  require(out_px > 0, "crop_resize: non-positive output size");

  const double scale = out_px / side;
  CropTransform t{cx - 0.5 * side, cy - 0.5 * side, scale};
  Image patch(out_px, out_px);
  for (int oy = 0; oy < out_px; ++oy) {
    for (int ox = 0; ox < out_px; ++ox) {
      // Source position of the output pixel center, shifted so integer
      // sample coordinates address pixel centers.
      const double sx = t.origin_x + (ox + 0.5) / scale - 0.5;
      const double sy = t.origin_y + (oy + 0.5) / scale - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      std::uint8_t* dst = patch.px(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double v00 = sample_channel(frame, x0, y0, c);
        const double v10 = sample_channel(frame, x0 + 1, y0, c);
        const double v01 = sample_channel(frame, x0, y0 + 1, c);
        const double v11 = sample_channel(frame, x0 + 1, y0 + 1, c);
        const double v = v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) +
                         v01 * (1 - fx) * fy + v11 * fx * fy;
        dst[c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  }
  return CropResult{std::move(patch), t};
}

double context_side(const BBox& box) {
  require(box.w > 0.0 && box.h > 0.0, "context_side: degenerate box");
  return std::max(box.w, box.h) + 0.5 * (box.w + box.h);
}

}  // namespace nltrack
