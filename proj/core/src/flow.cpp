#include "nltrack/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "nltrack/common.hpp"

namespace nltrack {

BlockMatchingFlow::BlockMatchingFlow(int block, int range)
    : block_(block), range_(range) {
  require(block >= 2, "BlockMatchingFlow: block must be at least 2");
  require(range >= 1, "BlockMatchingFlow: range must be at least 1");
}

namespace {

// Sum of absolute intensity differences between a block in prev at (x,y) and
// the displaced block in cur.
long sad(const Image& prev, const Image& cur, int x, int y, int dx, int dy,
         int block) {
  long acc = 0;
  for (int by = 0; by < block; ++by) {
    const std::uint8_t* p = prev.px(x, y + by);
    const std::uint8_t* q = cur.px(x + dx, y + dy + by);
    for (int bx = 0; bx < block * 3; ++bx)
      acc += std::abs(static_cast<int>(p[bx]) - static_cast<int>(q[bx]));
  }
  return acc;
}

}  // namespace

FlowVec BlockMatchingFlow::mean_flow(const Image& prev, const Image& cur,
                                     const BBox& region) const {
  require(prev.width == cur.width && prev.height == cur.height,
          "BlockMatchingFlow: frame size mismatch");
  require(prev.width > 0 && prev.height > 0, "BlockMatchingFlow: empty frame");

  // Candidate displacements sorted by magnitude, then row major; with
  // strict-improvement scanning this implements the tie-toward-zero rule.
  std::vector<std::pair<int, int>> candidates;
  candidates.reserve(static_cast<std::size_t>(2 * range_ + 1) *
                     (2 * range_ + 1));
  for (int dy = -range_; dy <= range_; ++dy)
    for (int dx = -range_; dx <= range_; ++dx) candidates.emplace_back(dx, dy);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) {
                     return a.first * a.first + a.second * a.second <
                            b.first * b.first + b.second * b.second;
                   });

  // Clip the region to the frame and snap block origins inside it.
  const int rx1 = std::max(0, static_cast<int>(std::floor(region.x1())));
  const int ry1 = std::max(0, static_cast<int>(std::floor(region.y1())));
  const int rx2 = std::min(prev.width, static_cast<int>(std::ceil(region.x2())));
  const int ry2 = std::min(prev.height, static_cast<int>(std::ceil(region.y2())));
  if (rx2 - rx1 <= 0 || ry2 - ry1 <= 0) return FlowVec{};

  std::vector<int> xs, ys;
  for (int x = rx1; x + block_ <= rx2; x += block_) xs.push_back(x);
  for (int y = ry1; y + block_ <= ry2; y += block_) ys.push_back(y);
  // Region narrower than one block: fall back to a single clamped block.
  if (xs.empty()) {
    const int x = std::clamp((rx1 + rx2 - block_) / 2, 0, prev.width - block_);
    if (x >= 0 && x + block_ <= prev.width) xs.push_back(x);
  }
  if (ys.empty()) {
    const int y = std::clamp((ry1 + ry2 - block_) / 2, 0, prev.height - block_);
    if (y >= 0 && y + block_ <= prev.height) ys.push_back(y);
  }
  if (xs.empty() || ys.empty()) return FlowVec{};

  double sum_dx = 0.0, sum_dy = 0.0;
  int blocks = 0;
  for (int y : ys) {
    for (int x : xs) {
      long best = -1;
      int best_dx = 0, best_dy = 0;
      for (const auto& [dx, dy] : candidates) {
        if (x + dx < 0 || y + dy < 0 || x + dx + block_ > cur.width ||
            y + dy + block_ > cur.height)
          continue;
        const long cost = sad(prev, cur, x, y, dx, dy, block_);
        if (best < 0 || cost < best) {
          best = cost;
          best_dx = dx;
          best_dy = dy;
        }
      }
      if (best < 0) continue;
      sum_dx += best_dx;
      sum_dy += best_dy;
      ++blocks;
    }
  }
  if (blocks == 0) return FlowVec{};
  return FlowVec{sum_dx / blocks, sum_dy / blocks};
}

void save_flow_field(const FlowField& f, const std::string& path) {
  require(f.width > 0 && f.height > 0, "save_flow_field: empty field");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_flow_field: cannot open " + path);
  const std::int32_t dims[2] = {f.width, f.height};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(f.uv.data()),
            static_cast<std::streamsize>(f.uv.size() * sizeof(float)));
  require(out.good(), "save_flow_field: short write to " + path);
}

FlowField load_flow_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_flow_field: cannot open " + path);
  std::int32_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  require(in.good() && dims[0] > 0 && dims[1] > 0,
          "load_flow_field: bad header in " + path);
  FlowField f(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(f.uv.data()),
          static_cast<std::streamsize>(f.uv.size() * sizeof(float)));
  require(in.good(), "load_flow_field: truncated payload in " + path);
  return f;
}

}  // namespace nltrack
