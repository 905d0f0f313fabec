#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nltrack/image.hpp"
#include "nltrack/tensor.hpp"

namespace nltrack {

// Dense feature backbone. Implementations must be deterministic and
// translation covariant at stride granularity: shifting the input by one
// stride shifts the output by one cell.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureMap extract(const Image& crop) const = 0;
  virtual int channels() const = 0;
  virtual int stride() const = 0;
};

// Hand-rolled descriptor over non-overlapping stride x stride blocks.
// Channels 0..7 are color statistics (chromaticity means, per-channel stds,
// intensity mean/std), channels 8..15 an 8-bin gradient orientation
// histogram computed strictly inside the block. Everything is per block, so
// covariance at stride shifts is exact, not approximate.
class ToyFeatureExtractor final : public FeatureExtractor {
 public:
  explicit ToyFeatureExtractor(int stride = 8);
  FeatureMap extract(const Image& crop) const override;
  int channels() const override { return 16; }
  int stride() const override { return stride_; }

 private:
  int stride_;
};

// Wraps another extractor and mirrors every result into `dir`, keyed by a
// hash of the crop bytes. Pairs with ReplayFeatureExtractor below.
class RecordingExtractor final : public FeatureExtractor {
 public:
  RecordingExtractor(std::shared_ptr<const FeatureExtractor> inner,
                     std::string dir);
  FeatureMap extract(const Image& crop) const override;
  int channels() const override { return inner_->channels(); }
  int stride() const override { return inner_->stride(); }

 private:
  std::shared_ptr<const FeatureExtractor> inner_;
  std::string dir_;
};

// Serves features previously captured by RecordingExtractor. A miss is an
// error: replay runs must never silently fall back to live extraction.
class ReplayFeatureExtractor final : public FeatureExtractor {
 public:
  ReplayFeatureExtractor(std::string dir, int channels, int stride);
  FeatureMap extract(const Image& crop) const override;
  int channels() const override { return channels_; }
  int stride() const override { return stride_; }

 private:
  std::string dir_;
  int channels_;
  int stride_;
};

std::string crop_cache_key(const Image& crop);

// Fixed token list plus hash buckets for everything else. The embedding
// dimension is tokens + oov_buckets and is baked into trained weights.
struct Vocabulary {
  std::vector<std::string> tokens;
  int oov_buckets = 64;

  int dim() const { return static_cast<int>(tokens.size()) + oov_buckets; }
  static Vocabulary load(const std::string& path, int oov_buckets = 64);
  void save(const std::string& path) const;
};

// L2-normalised bag of words. Tokenisation lowercases and splits on
// non-alphanumeric runs; unknown tokens hash into the OOV buckets. A
// sentence with no tokens is an error, not a zero vector.
std::vector<double> embed_sentence(const std::string& sentence,
                                   const Vocabulary& vocab);

// 1x1 convolution: per cell out = W^T in + b. W is stored in-major
// (w[c_in * out_ch + c_out]).
struct ProjectionHead {
  int in_ch = 0;
  int out_ch = 0;
  std::vector<double> w;
  std::vector<double> b;

  static ProjectionHead zeros(int in_ch, int out_ch);
  FeatureMap apply(const FeatureMap& in) const;
  void validate() const;
};

// Linear map from a sentence embedding to a spatial correlation kernel of
// shape cells x cells x out_ch. Weight layout: w[d * kernel_size + j] with
// j = (v * cells + u) * out_ch + m, matching FeatureMap storage.
struct KernelHead {
  int embed_dim = 0;
  int cells = 1;
  int out_ch = 0;
  std::vector<double> w;
  std::vector<double> b;

  static KernelHead zeros(int embed_dim, int cells, int out_ch);
  int kernel_size() const { return cells * cells * out_ch; }
  FeatureMap apply(const std::vector<double>& embedding) const;
  void validate() const;
};

// Language-conditioned correlation kernels for the two prediction heads.
struct NLKernel {
  FeatureMap cls;
  FeatureMap reg;
};

// Template-matching branch: project both sides into correlation space,
// correlate, then reduce to per-anchor outputs.
struct VisualHeads {
  ProjectionHead search_cls, search_reg;      // backbone -> corr space
  ProjectionHead exemplar_cls, exemplar_reg;  // backbone -> corr space
  ProjectionHead reduce_cls, reduce_reg;      // corr space -> 2k / 4k
};

// Language branch: the kernel comes from the sentence embedding instead of a
// template image.
struct NlHeads {
  ProjectionHead search_cls, search_reg;
  KernelHead embed_cls, embed_reg;
  ProjectionHead reduce_cls, reduce_reg;
};

NLKernel build_nl_kernel(const std::vector<double>& embedding,
                         const NlHeads& heads);

struct ModelConfig {
  int feature_channels = 16;
  int stride = 8;
  int head_channels = 8;  // correlation-space width
  std::vector<double> anchor_scales = {4096.0};
  std::vector<double> anchor_ratios = {0.33, 0.5, 1.0, 2.0, 3.0};
  int exemplar_px = 128;
  int search_px = 256;
  int exemplar_kernel_cells = 8;  // central crop of template features
  int nl_kernel_cells = 9;        // spatial extent of the language kernel
  int oov_buckets = 64;

  int num_anchors() const {
    return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
  }
  int exemplar_cells() const { return exemplar_px / stride; }
  int search_cells() const { return search_px / stride; }
  void validate() const;
};

struct Model {
  ModelConfig cfg;
  Vocabulary vocab;
  VisualHeads visual;
  NlHeads nl;
  std::uint64_t seed = 0;
};

// Seeded random initialisation; identical seed gives identical weights.
Model make_model(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed);

// Directory bundle: manifest.json + vocab.txt + weights.bin (raw little
// endian float64 in manifest order). Byte-stable for a fixed model.
void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

// Central cells x cells crop, used to cut the template kernel out of the
// projected exemplar features.
FeatureMap central_crop(const FeatureMap& fm, int cells);

}  // namespace nltrack
