#pragma once

#include <string>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/image.hpp"

namespace nltrack {

struct FlowVec {
  double vx = 0.0;
  double vy = 0.0;
};

// Estimates the mean displacement of content inside `region` between two
// frames. Implementations must be deterministic.
class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  virtual FlowVec mean_flow(const Image& prev, const Image& cur,
                            const BBox& region) const = 0;
};

class ZeroFlow final : public FlowProvider {
 public:
  FlowVec mean_flow(const Image&, const Image&, const BBox&) const override {
    return FlowVec{};
  }
};

// Fixed answer, for tests that need a controlled displacement.
class ConstantFlow final : public FlowProvider {
 public:
  ConstantFlow(double vx, double vy) : v_{vx, vy} {}
  FlowVec mean_flow(const Image&, const Image&, const BBox&) const override {
    return v_;
  }

 private:
  FlowVec v_;
};

// Exhaustive SAD block matching. Blocks tile the region; candidate
// displacements are scanned in order of increasing magnitude with strict
// improvement, so flat cost surfaces resolve toward zero motion.
class BlockMatchingFlow final : public FlowProvider {
 public:
  explicit BlockMatchingFlow(int block = 16, int range = 16);
  FlowVec mean_flow(const Image& prev, const Image& cur,
                    const BBox& region) const override;

 private:
  int block_;
  int range_;
};

// Dense displacement field, two floats per pixel (dx, dy).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> uv;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), uv(static_cast<std::size_t>(w) * h * 2, 0.0f) {}
  float* at(int x, int y) {
    return &uv[(static_cast<std::size_t>(y) * width + x) * 2];
  }
  const float* at(int x, int y) const {
    return &uv[(static_cast<std::size_t>(y) * width + x) * 2];
  }
};

// Binary layout: int32 width, int32 height, then row-major float32 pairs.
void save_flow_field(const FlowField& f, const std::string& path);
FlowField load_flow_field(const std::string& path);

}  // namespace nltrack
