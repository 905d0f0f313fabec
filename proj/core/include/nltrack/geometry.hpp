#pragma once

#include <optional>
#include <vector>

namespace nltrack {

// Axis-aligned box in center form. Width/height must be positive for every
// operation below; degenerate boxes are rejected at the call sites that
// cannot tolerate them.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static BBox from_corners(double x1, double y1, double x2, double y2);
  // Top-left + size, the on-disk annotation convention.
  static BBox from_xywh(double x, double y, double w, double h);
};

// Offset-scale box coding relative to an anchor: (dx, dy) are center offsets
// in anchor-size units, (dw, dh) are log size ratios.
struct RegDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

// Anchor lattice tied to a score map: one cell per map position, k anchor
// shapes per cell. scales are pixel areas; ratios are width:height.
struct AnchorGrid {
  int feat_w = 0;
  int feat_h = 0;
  int stride = 8;
  std::vector<double> scales;
  std::vector<double> ratios;

  int num_anchors_per_cell() const {
    return static_cast<int>(scales.size() * ratios.size());
  }
  // Pure function of (ix, iy, a) and the grid parameters.
  BBox anchor_at(int ix, int iy, int a) const;
  void validate() const;
};

double iou(const BBox& a, const BBox& b);

// Flat list in ((iy * feat_w + ix) * k + a) order; a enumerates scales outer,
// ratios inner.
std::vector<BBox> gen_anchors(const AnchorGrid& grid);

RegDelta encode_box(const BBox& anchor, const BBox& target);
// Inverse of encode_box. When frame dimensions are given the result is
// clamped to lie inside [0,frame_w]x[0,frame_h] with size preserved where
// possible.
BBox decode_box(const BBox& anchor, const RegDelta& delta,
                std::optional<double> frame_w = std::nullopt,
                std::optional<double> frame_h = std::nullopt);

}  // namespace nltrack
