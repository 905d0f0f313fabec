#include "nltrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nltrack/common.hpp"

namespace nltrack {

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
  require(x2 > x1 && y2 > y1, "BBox::from_corners: empty box (" +
                                  std::to_string(x1) + "," + std::to_string(y1) +
                                  "," + std::to_string(x2) + "," +
                                  std::to_string(y2) + ")");
  return BBox{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

BBox BBox::from_xywh(double x, double y, double w, double h) {
  require(w > 0.0 && h > 0.0, "BBox::from_xywh: non-positive size " +
                                  std::to_string(w) + "x" + std::to_string(h));
  return BBox{x + 0.5 * w, y + 0.5 * h, w, h};
}

double iou(const BBox& a, const BBox& b) {
  require(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0,
          "iou: degenerate box");
  const double ix = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double iy = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

void AnchorGrid::validate() const {
  require(feat_w > 0 && feat_h > 0, "AnchorGrid: non-positive feature dims " +
                                        std::to_string(feat_w) + "x" +
                                        std::to_string(feat_h));
  require(stride > 0, "AnchorGrid: non-positive stride");
  require(!scales.empty() && !ratios.empty(),
          "AnchorGrid: scales and ratios must be non-empty");
  for (double s : scales) require(s > 0.0, "AnchorGrid: non-positive scale");
  for (double r : ratios) require(r > 0.0, "AnchorGrid: non-positive ratio");
}

BBox AnchorGrid::anchor_at(int ix, int iy, int a) const {
  const int nr = static_cast<int>(ratios.size());
  const double scale = scales[static_cast<std::size_t>(a / nr)];
  const double ratio = ratios[static_cast<std::size_t>(a % nr)];
  // Area fixed at `scale`, aspect w:h = ratio.
  const double w = std::sqrt(scale * ratio);
  const double h = std::sqrt(scale / ratio);
  return BBox{(ix + 0.5) * stride, (iy + 0.5) * stride, w, h};
}

std::vector<BBox> gen_anchors(const AnchorGrid& grid) {
  grid.validate();
  const int k = grid.num_anchors_per_cell();
  std::vector<BBox> out;
  out.reserve(static_cast<std::size_t>(grid.feat_w) * grid.feat_h * k);
  for (int iy = 0; iy < grid.feat_h; ++iy)
    for (int ix = 0; ix < grid.feat_w; ++ix)
      for (int a = 0; a < k; ++a) out.push_back(grid.anchor_at(ix, iy, a));
  return out;
}

RegDelta encode_box(const BBox& anchor, const BBox& target) {
  require(anchor.w > 0.0 && anchor.h > 0.0, "encode_box: degenerate anchor");
  require(target.w > 0.0 && target.h > 0.0, "encode_box: degenerate target");
  return RegDelta{(target.cx - anchor.cx) / anchor.w,
                  (target.cy - anchor.cy) / anchor.h,
                  std::log(target.w / anchor.w),
                  std::log(target.h / anchor.h)};
}

BBox decode_box(const BBox& anchor, const RegDelta& delta,
                std::optional<double> frame_w, std::optional<double> frame_h) {
  require(anchor.w > 0.0 && anchor.h > 0.0, "decode_box: degenerate anchor");
  BBox out{anchor.cx + delta.dx * anchor.w, anchor.cy + delta.dy * anchor.h,
           anchor.w * std::exp(delta.dw), anchor.h * std::exp(delta.dh)};
  if (frame_w && frame_h) {
    out.w = std::min(out.w, *frame_w);
    out.h = std::min(out.h, *frame_h);
    out.cx = std::clamp(out.cx, 0.5 * out.w, *frame_w - 0.5 * out.w);
    out.cy = std::clamp(out.cy, 0.5 * out.h, *frame_h - 0.5 * out.h);
  }
  return out;
}

}  // namespace nltrack
