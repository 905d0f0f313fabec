#include "nltrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "nltrack/common.hpp"

namespace nltrack {

std::string FeatureMap::shape_str() const {
  return std::to_string(width) + "x" + std::to_string(height) + "x" +
         std::to_string(channels);
}

ScoreMap ScoreMap::wrap(FeatureMap fm) {
  require(fm.channels > 0 && fm.channels % 2 == 0,
          "ScoreMap: channel count " + std::to_string(fm.channels) +
              " is not an even pair layout");
  return ScoreMap{std::move(fm)};
}

RegMap RegMap::wrap(FeatureMap fm) {
  require(fm.channels > 0 && fm.channels % 4 == 0,
          "RegMap: channel count " + std::to_string(fm.channels) +
              " is not a multiple of 4");
  return RegMap{std::move(fm)};
}

FeatureMap depthwise_xcorr(const FeatureMap& search, const FeatureMap& kernel) {
  require(search.channels == kernel.channels,
          "depthwise_xcorr: channel mismatch, search " + search.shape_str() +
              " vs kernel " + kernel.shape_str());
  require(kernel.width >= 1 && kernel.height >= 1 && search.width >= 1 &&
              search.height >= 1,
          "depthwise_xcorr: empty input, search " + search.shape_str() +
              " vs kernel " + kernel.shape_str());
  require(kernel.width <= search.width && kernel.height <= search.height,
          "depthwise_xcorr: kernel " + kernel.shape_str() +
              " exceeds search " + search.shape_str());

  const int ow = search.width - kernel.width + 1;
  const int oh = search.height - kernel.height + 1;
  const int nc = search.channels;
  FeatureMap out(ow, oh, nc);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double* dst = out.cell(x, y);
      for (int v = 0; v < kernel.height; ++v) {
        for (int u = 0; u < kernel.width; ++u) {
          const double* s = search.cell(x + u, y + v);
          const double* k = kernel.cell(u, v);
          for (int c = 0; c < nc; ++c) dst[c] += s[c] * k[c];
        }
      }
    }
  }
  return out;
}

void subtract_channel_means(FeatureMap& fm) {
  const int cells = fm.width * fm.height;
  require(cells > 0, "subtract_channel_means: empty map " + fm.shape_str());
  for (int c = 0; c < fm.channels; ++c) {
    double sum = 0.0;
    for (int y = 0; y < fm.height; ++y)
      for (int x = 0; x < fm.width; ++x) sum += fm.at(x, y, c);
    const double mean = sum / cells;
    for (int y = 0; y < fm.height; ++y)
      for (int x = 0; x < fm.width; ++x) fm.at(x, y, c) -= mean;
  }
}

FeatureMap foreground_softmax(const ScoreMap& scores) {
  const FeatureMap& sm = scores.m;
  const int k = scores.num_anchors();
  FeatureMap out(sm.width, sm.height, k);
  for (int y = 0; y < sm.height; ++y) {
    for (int x = 0; x < sm.width; ++x) {
      for (int a = 0; a < k; ++a) {
        const double bg = sm.at(x, y, 2 * a);
        const double fg = sm.at(x, y, 2 * a + 1);
        const double m = std::max(bg, fg);
        const double eb = std::exp(bg - m);
        const double ef = std::exp(fg - m);
        out.at(x, y, a) = ef / (eb + ef);
      }
    }
  }
  return out;
}

FeatureMap gaussian_window(const FeatureMap& field, double cx, double cy,
                           double sigma) {
  require(sigma > 0.0, "gaussian_window: sigma must be positive");
  FeatureMap out = field;
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      double* p = out.cell(x, y);
      for (int c = 0; c < field.channels; ++c) p[c] *= g;
    }
  }
  return out;
}

double default_window_sigma(int w, int h) {
  require(w > 0 && h > 0, "default_window_sigma: non-positive dims");
  return 0.2 * std::min(w, h);
}

void save_feature_map(const FeatureMap& fm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_feature_map: cannot open " + path);
  const std::int32_t dims[3] = {fm.width, fm.height, fm.channels};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(fm.data.data()),
            static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
  require(out.good(), "save_feature_map: short write to " + path);
}

FeatureMap load_feature_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_feature_map: cannot open " + path);
  std::int32_t dims[3] = {0, 0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  require(in.good() && dims[0] > 0 && dims[1] > 0 && dims[2] > 0,
          "load_feature_map: bad header in " + path);
  FeatureMap fm(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(fm.data.data()),
          static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
  require(in.good(), "load_feature_map: truncated payload in " + path);
  return fm;
}

}  // namespace nltrack
