#pragma once

#include <string>
#include <vector>

namespace nltrack {

// Dense W x H x C map, row major with channels innermost:
// data[(y * width + x) * channels + c].
struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, 0.0) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double* cell(int x, int y) {
    return &data[(static_cast<std::size_t>(y) * width + x) * channels];
  }
  const double* cell(int x, int y) const {
    return &data[(static_cast<std::size_t>(y) * width + x) * channels];
  }
  std::size_t size() const { return data.size(); }
  std::string shape_str() const;
};

// Classification logits: channel pair (2a, 2a+1) holds (background,
// foreground) for anchor a.
struct ScoreMap {
  FeatureMap m;
  int num_anchors() const { return m.channels / 2; }
  static ScoreMap wrap(FeatureMap fm);
};

// Regression output: channels (4a..4a+3) hold (dx, dy, dw, dh) for anchor a.
struct RegMap {
  FeatureMap m;
  int num_anchors() const { return m.channels / 4; }
  static RegMap wrap(FeatureMap fm);
};

// Valid cross-correlation, stride 1, no padding, per channel:
//   out(x, y, c) = sum_{u,v} search(x+u, y+v, c) * kernel(u, v, c).
// Output is (sw-kw+1) x (sh-kh+1) x C. Kernel must fit inside the search
// map and channel counts must match.
FeatureMap depthwise_xcorr(const FeatureMap& search, const FeatureMap& kernel);

// Subtracts each channel's spatial mean in place. A zero-mean correlation
// kernel responds to contrast only, not to the absolute level of the search
// map, which would otherwise swamp the output.
void subtract_channel_means(FeatureMap& fm);

// Per anchor two-way softmax, returning the foreground probability as a
// W x H x k map. Numerically stable for large logits.
FeatureMap foreground_softmax(const ScoreMap& scores);

// Multiplies every channel at cell (x, y) by exp(-d^2 / (2 sigma^2)) where d
// is the distance from the cell to (cx, cy), in cells. Pure attenuation: no
// renormalisation, so relative order along any ray from the center is kept.
FeatureMap gaussian_window(const FeatureMap& field, double cx, double cy,
                           double sigma);

// 0.2 * min(out_w, out_h) unless overridden.
double default_window_sigma(int w, int h);

// Flat binary serialisation (three int32 dims + float64 payload, little
// endian). Used by the replay backend and memory snapshots.
void save_feature_map(const FeatureMap& fm, const std::string& path);
FeatureMap load_feature_map(const std::string& path);

}  // namespace nltrack
