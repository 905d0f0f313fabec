#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nltrack/geometry.hpp"

namespace nltrack {

// 8-bit interleaved RGB frame. Pixel (x, y) covers [x,x+1) x [y,y+1); its
// center is (x+0.5, y+0.5).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h),
        rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* px(int x, int y) {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  const std::uint8_t* px(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  double intensity(int x, int y) const {
    const std::uint8_t* p = px(x, y);
    return (p[0] + p[1] + p[2]) / (3.0 * 255.0);
  }
};

void save_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

// Maps coordinates of a resampled crop back into the source frame:
//   frame = origin + crop / scale.
struct CropTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale = 1.0;  // crop pixels per frame pixel

  BBox crop_to_frame(const BBox& b) const {
    return BBox{origin_x + b.cx / scale, origin_y + b.cy / scale, b.w / scale,
                b.h / scale};
  }
  BBox frame_to_crop(const BBox& b) const {
    return BBox{(b.cx - origin_x) * scale, (b.cy - origin_y) * scale,
                b.w * scale, b.h * scale};
  }
};

struct CropResult {
  Image patch;
  CropTransform transform;
};

// Square window of side `side` centered at (cx, cy), bilinearly resampled to
// out_px x out_px. Regions outside the frame read as mid gray.
CropResult crop_resize(const Image& frame, double cx, double cy, double side,
                       int out_px);

// Side of the context-augmented square region around a target box:
// max(w, h) + 0.5 * (w + h). Template and search windows are scale multiples
// of this.
double context_side(const BBox& box);

}  // namespace nltrack
