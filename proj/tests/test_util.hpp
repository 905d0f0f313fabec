#pragma once

// Shared helpers for the test suites: independent reference implementations
// (oracles) that the production code is checked against, plus small
// conveniences. The oracles are deliberately written in the most naive way
// possible and must stay independent of the library internals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/tensor.hpp"

namespace testutil {

// Plain quadruple loop correlation, the reference for depthwise_xcorr.
inline nltrack::FeatureMap naive_xcorr(const nltrack::FeatureMap& s,
                                       const nltrack::FeatureMap& k) {
  nltrack::FeatureMap out(s.width - k.width + 1, s.height - k.height + 1,
                          s.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < out.channels; ++c) {
        double acc = 0.0;
        for (int v = 0; v < k.height; ++v)
          for (int u = 0; u < k.width; ++u)
            acc += s.at(x + u, y + v, c) * k.at(u, v, c);
        out.at(x, y, c) = acc;
      }
  return out;
}

// Grid-counting IoU. Samples cell centers on a uniform lattice of pitch
// `step` over the joint bounding region. Exact whenever all box edges lie on
// multiples of `step` times two (cell centers then never sit on an edge).
inline double raster_iou(const nltrack::BBox& a, const nltrack::BBox& b,
                         double step = 0.125) {
  const double x_lo = std::min(a.x1(), b.x1());
  const double x_hi = std::max(a.x2(), b.x2());
  const double y_lo = std::min(a.y1(), b.y1());
  const double y_hi = std::max(a.y2(), b.y2());
  const int nx = static_cast<int>(std::ceil((x_hi - x_lo) / step));
  const int ny = static_cast<int>(std::ceil((y_hi - y_lo) / step));
  std::int64_t in_a = 0, in_b = 0, in_both = 0;
  for (int iy = 0; iy < ny; ++iy) {
    const double py = y_lo + (iy + 0.5) * step;
    for (int ix = 0; ix < nx; ++ix) {
      const double px = x_lo + (ix + 0.5) * step;
      const bool ia = px > a.x1() && px < a.x2() && py > a.y1() && py < a.y2();
      const bool ib = px > b.x1() && px < b.x2() && py > b.y1() && py < b.y2();
      in_a += ia;
      in_b += ib;
      in_both += ia && ib;
    }
  }
  if (in_a + in_b - in_both == 0) return 0.0;
  return static_cast<double>(in_both) /
         static_cast<double>(in_a + in_b - in_both);
}

inline nltrack::FeatureMap random_map(int w, int h, int c,
                                      std::mt19937_64& rng, double lo = -1.0,
                                      double hi = 1.0) {
  nltrack::FeatureMap fm(w, h, c);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : fm.data) v = dist(rng);
  return fm;
}

inline double unit(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Unique scratch directory under the build tree; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nltrack_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
