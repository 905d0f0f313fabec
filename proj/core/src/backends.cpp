#include "nltrack/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nltrack/common.hpp"

namespace nltrack {

using nlohmann::json;

ToyFeatureExtractor::ToyFeatureExtractor(int stride) : stride_(stride) {
  require(stride >= 2, "ToyFeatureExtractor: stride must be at least 2");
}

FeatureMap ToyFeatureExtractor::extract(const Image& crop) const {
  require(crop.width > 0 && crop.height > 0, "extract: empty crop");
  require(crop.width % stride_ == 0 && crop.height % stride_ == 0,
          "extract: crop " + std::to_string(crop.width) + "x" +
              std::to_string(crop.height) + " not divisible by stride " +
              std::to_string(stride_));
  const int bw = crop.width / stride_;
  const int bh = crop.height / stride_;
  const int n = stride_ * stride_;
  FeatureMap out(bw, bh, 16);

  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      const int x0 = bx * stride_;
      const int y0 = by * stride_;
      double sum[3] = {0, 0, 0};
      double isum = 0;
      for (int y = y0; y < y0 + stride_; ++y) {
        for (int x = x0; x < x0 + stride_; ++x) {
          const std::uint8_t* p = crop.px(x, y);
          double inten = 0;
          for (int c = 0; c < 3; ++c) {
            const double v = p[c] / 255.0;
            sum[c] += v;
            inten += v;
          }
          isum += inten / 3.0;
        }
      }
      double* f = out.cell(bx, by);
      const double imean = isum / n;
      const double mean[3] = {sum[0] / n, sum[1] / n, sum[2] / n};
      // Two-pass variance: exactly zero on constant blocks.
      double dev[3] = {0, 0, 0};
      double idev = 0;
      for (int y = y0; y < y0 + stride_; ++y) {
        for (int x = x0; x < x0 + stride_; ++x) {
          const std::uint8_t* p = crop.px(x, y);
          double inten = 0;
          for (int c = 0; c < 3; ++c) {
            const double v = p[c] / 255.0;
            dev[c] += (v - mean[c]) * (v - mean[c]);
            inten += v;
          }
          inten /= 3.0;
          idev += (inten - imean) * (inten - imean);
        }
      }
      for (int c = 0; c < 3; ++c) {
        f[c] = mean[c] - imean;  // chromaticity: color relative to intensity
        f[3 + c] = std::sqrt(dev[c] / n);
      }
      f[6] = imean;
      f[7] = std::sqrt(idev / n);

      // Orientation histogram from central differences, interior pixels
      // only so the block never reads its neighbours.
      for (int y = y0 + 1; y < y0 + stride_ - 1; ++y) {
        for (int x = x0 + 1; x < x0 + stride_ - 1; ++x) {
          const double gx = crop.intensity(x + 1, y) - crop.intensity(x - 1, y);
          const double gy = crop.intensity(x, y + 1) - crop.intensity(x, y - 1);
          const double mag = std::sqrt(gx * gx + gy * gy);
          if (mag < 1e-12) continue;
          const double ang = std::atan2(gy, gx);  // [-pi, pi]
          int bin = static_cast<int>((ang + M_PI) * (8.0 / (2.0 * M_PI)));
          bin = std::clamp(bin, 0, 7);
          f[8 + bin] += mag;
        }
      }
      for (int b = 0; b < 8; ++b) f[8 + b] /= n;
    }
  }
  return out;
}

std::string crop_cache_key(const Image& crop) {
  std::uint64_t h = fnv1a(crop.rgb.data(), crop.rgb.size());
  h = fnv1a(&crop.width, sizeof(crop.width), h);
  h = fnv1a(&crop.height, sizeof(crop.height), h);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

RecordingExtractor::RecordingExtractor(
    std::shared_ptr<const FeatureExtractor> inner, std::string dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  require(inner_ != nullptr, "RecordingExtractor: null inner extractor");
  std::filesystem::create_directories(dir_);
}

FeatureMap RecordingExtractor::extract(const Image& crop) const {
  FeatureMap fm = inner_->extract(crop);
  save_feature_map(fm, dir_ + "/" + crop_cache_key(crop) + ".fmap");
  return fm;
}

ReplayFeatureExtractor::ReplayFeatureExtractor(std::string dir, int channels,
                                               int stride)
    : dir_(std::move(dir)), channels_(channels), stride_(stride) {}

FeatureMap ReplayFeatureExtractor::extract(const Image& crop) const {
  const std::string path = dir_ + "/" + crop_cache_key(crop) + ".fmap";
  require(std::filesystem::exists(path),
          "ReplayFeatureExtractor: no recorded features for crop key " +
              crop_cache_key(crop) + " in " + dir_);
  return load_feature_map(path);
}

Vocabulary Vocabulary::load(const std::string& path, int oov_buckets) {
  std::ifstream in(path);
  require(in.good(), "Vocabulary::load: cannot open " + path);
  Vocabulary v;
  v.oov_buckets = oov_buckets;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty()) continue;
    v.tokens.push_back(line);
  }
  require(!v.tokens.empty(), "Vocabulary::load: " + path + " has no tokens");
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  require(out.good(), "Vocabulary::save: cannot open " + path);
  for (const auto& t : tokens) out << t << "\n";
}

std::vector<double> embed_sentence(const std::string& sentence,
                                   const Vocabulary& vocab) {
  require(vocab.oov_buckets > 0, "embed_sentence: vocabulary has no buckets");
  std::vector<double> vec(static_cast<std::size_t>(vocab.dim()), 0.0);
  std::string token;
  int count = 0;
  auto flush = [&] {
    if (token.empty()) return;
    ++count;
    auto it = std::find(vocab.tokens.begin(), vocab.tokens.end(), token);
    std::size_t idx;
    if (it != vocab.tokens.end()) {
      idx = static_cast<std::size_t>(it - vocab.tokens.begin());
    } else {
      idx = vocab.tokens.size() + fnv1a(token) % vocab.oov_buckets;
    }
    vec[idx] += 1.0;
    token.clear();
  };
  for (char ch : sentence) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      token.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  require(count > 0, "embed_sentence: sentence has no tokens: \"" + sentence +
                         "\"");
  double norm = 0.0;
  for (double v : vec) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : vec) v /= norm;
  return vec;
}

ProjectionHead ProjectionHead::zeros(int in_ch, int out_ch) {
  ProjectionHead h;
  h.in_ch = in_ch;
  h.out_ch = out_ch;
  h.w.assign(static_cast<std::size_t>(in_ch) * out_ch, 0.0);
  h.b.assign(static_cast<std::size_t>(out_ch), 0.0);
  return h;
}

void ProjectionHead::validate() const {
  require(in_ch > 0 && out_ch > 0, "ProjectionHead: non-positive dims");
  require(w.size() == static_cast<std::size_t>(in_ch) * out_ch &&
              b.size() == static_cast<std::size_t>(out_ch),
          "ProjectionHead: weight storage does not match dims");
}

FeatureMap ProjectionHead::apply(const FeatureMap& in) const {
  validate();
  require(in.channels == in_ch,
          "ProjectionHead: input has " + std::to_string(in.channels) +
              " channels, head expects " + std::to_string(in_ch));
  FeatureMap out(in.width, in.height, out_ch);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      const double* src = in.cell(x, y);
      double* dst = out.cell(x, y);
      for (int m = 0; m < out_ch; ++m) dst[m] = b[static_cast<std::size_t>(m)];
      for (int c = 0; c < in_ch; ++c) {
        const double v = src[c];
        const double* wr = &w[static_cast<std::size_t>(c) * out_ch];
        for (int m = 0; m < out_ch; ++m) dst[m] += v * wr[m];
      }
    }
  }
  return out;
}

KernelHead KernelHead::zeros(int embed_dim, int cells, int out_ch) {
  KernelHead h;
  h.embed_dim = embed_dim;
  h.cells = cells;
  h.out_ch = out_ch;
  h.w.assign(static_cast<std::size_t>(embed_dim) * cells * cells * out_ch,
             0.0);
  h.b.assign(static_cast<std::size_t>(cells) * cells * out_ch, 0.0);
  return h;
}

void KernelHead::validate() const {
  require(embed_dim > 0 && cells > 0 && out_ch > 0,
          "KernelHead: non-positive dims");
  require(w.size() == static_cast<std::size_t>(embed_dim) * kernel_size() &&
              b.size() == static_cast<std::size_t>(kernel_size()),
          "KernelHead: weight storage does not match dims");
}

FeatureMap KernelHead::apply(const std::vector<double>& embedding) const {
  validate();
  require(static_cast<int>(embedding.size()) == embed_dim,
          "KernelHead: embedding dim " + std::to_string(embedding.size()) +
              ", head expects " + std::to_string(embed_dim));
  FeatureMap out(cells, cells, out_ch);
  const int ks = kernel_size();
  for (int j = 0; j < ks; ++j) out.data[static_cast<std::size_t>(j)] = b[j];
  for (int d = 0; d < embed_dim; ++d) {
    const double e = embedding[static_cast<std::size_t>(d)];
    if (e == 0.0) continue;
    const double* wr = &w[static_cast<std::size_t>(d) * ks];
    for (int j = 0; j < ks; ++j) out.data[static_cast<std::size_t>(j)] += e * wr[j];
  }
  return out;
}

NLKernel build_nl_kernel(const std::vector<double>& embedding,
                         const NlHeads& heads) {
  return NLKernel{heads.embed_cls.apply(embedding),
                  heads.embed_reg.apply(embedding)};
}

void ModelConfig::validate() const {
  require(feature_channels > 0 && head_channels > 0,
          "ModelConfig: non-positive channel counts");
  require(stride >= 2, "ModelConfig: stride must be at least 2");
  require(exemplar_px % stride == 0 && search_px % stride == 0,
          "ModelConfig: crop sizes " + std::to_string(exemplar_px) + "/" +
              std::to_string(search_px) + " not divisible by stride " +
              std::to_string(stride));
  require(exemplar_px < search_px,
          "ModelConfig: exemplar crop must be smaller than search crop");
  require(!anchor_scales.empty() && !anchor_ratios.empty(),
          "ModelConfig: empty anchor scales or ratios");
  require(exemplar_kernel_cells > 0 &&
              exemplar_kernel_cells <= exemplar_cells(),
          "ModelConfig: exemplar kernel cells out of range");
  require(nl_kernel_cells > 0 && nl_kernel_cells <= search_cells(),
          "ModelConfig: nl kernel cells out of range");
  require(oov_buckets > 0, "ModelConfig: need at least one OOV bucket");
}

namespace {

void fill_normal(std::vector<double>& v, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& x : v) x = dist(rng);
}

}  // namespace

Model make_model(const ModelConfig& cfg, Vocabulary vocab,
                 std::uint64_t seed) {
  cfg.validate();
  require(!vocab.tokens.empty(), "make_model: empty vocabulary");
  Model m;
  m.cfg = cfg;
  m.cfg.oov_buckets = vocab.oov_buckets;
  m.vocab = std::move(vocab);
  m.seed = seed;
  const int ch = cfg.feature_channels;
  const int mid = cfg.head_channels;
  const int k = cfg.num_anchors();
  const int dim = m.vocab.dim();

  m.visual.search_cls = ProjectionHead::zeros(ch, mid);
  m.visual.search_reg = ProjectionHead::zeros(ch, mid);
  m.visual.exemplar_cls = ProjectionHead::zeros(ch, mid);
  m.visual.exemplar_reg = ProjectionHead::zeros(ch, mid);
  m.visual.reduce_cls = ProjectionHead::zeros(mid, 2 * k);
  m.visual.reduce_reg = ProjectionHead::zeros(mid, 4 * k);
  m.nl.search_cls = ProjectionHead::zeros(ch, mid);
  m.nl.search_reg = ProjectionHead::zeros(ch, mid);
  m.nl.embed_cls = KernelHead::zeros(dim, cfg.nl_kernel_cells, mid);
  m.nl.embed_reg = KernelHead::zeros(dim, cfg.nl_kernel_cells, mid);
  m.nl.reduce_cls = ProjectionHead::zeros(mid, 2 * k);
  m.nl.reduce_reg = ProjectionHead::zeros(mid, 4 * k);

  // Fixed fill order; changing it would silently change every seeded model.
  // Scales are matched to the feature extractor's output range so the
  // correlation surface starts with usable spatial contrast; tiny scales
  // here leave gradient descent stuck refining only the biases.
  std::mt19937_64 rng(seed);
  fill_normal(m.visual.search_cls.w, rng, 0.6);
  fill_normal(m.visual.search_reg.w, rng, 0.6);
  fill_normal(m.visual.exemplar_cls.w, rng, 0.6);
  fill_normal(m.visual.exemplar_reg.w, rng, 0.6);
  fill_normal(m.visual.reduce_cls.w, rng, 0.15);
  fill_normal(m.visual.reduce_reg.w, rng, 0.15);
  fill_normal(m.nl.search_cls.w, rng, 0.6);
  fill_normal(m.nl.search_reg.w, rng, 0.6);
  fill_normal(m.nl.embed_cls.w, rng, 0.15);
  fill_normal(m.nl.embed_reg.w, rng, 0.15);
  fill_normal(m.nl.reduce_cls.w, rng, 0.15);
  fill_normal(m.nl.reduce_reg.w, rng, 0.15);
  return m;
}

FeatureMap central_crop(const FeatureMap& fm, int cells) {
  require(cells > 0 && cells <= fm.width && cells <= fm.height,
          "central_crop: " + std::to_string(cells) + " cells from " +
              fm.shape_str());
  const int x0 = (fm.width - cells) / 2;
  const int y0 = (fm.height - cells) / 2;
  FeatureMap out(cells, cells, fm.channels);
  for (int y = 0; y < cells; ++y)
    for (int x = 0; x < cells; ++x) {
      const double* src = fm.cell(x0 + x, y0 + y);
      double* dst = out.cell(x, y);
      std::copy(src, src + fm.channels, dst);
    }
  return out;
}

namespace {

struct HeadRef {
  std::string name;
  std::vector<double>* w;
  std::vector<double>* b;
};

std::vector<HeadRef> head_refs(Model& m) {
  return {
      {"visual.search_cls", &m.visual.search_cls.w, &m.visual.search_cls.b},
      {"visual.search_reg", &m.visual.search_reg.w, &m.visual.search_reg.b},
      {"visual.exemplar_cls", &m.visual.exemplar_cls.w,
       &m.visual.exemplar_cls.b},
      {"visual.exemplar_reg", &m.visual.exemplar_reg.w,
       &m.visual.exemplar_reg.b},
      {"visual.reduce_cls", &m.visual.reduce_cls.w, &m.visual.reduce_cls.b},
      {"visual.reduce_reg", &m.visual.reduce_reg.w, &m.visual.reduce_reg.b},
      {"nl.search_cls", &m.nl.search_cls.w, &m.nl.search_cls.b},
      {"nl.search_reg", &m.nl.search_reg.w, &m.nl.search_reg.b},
      {"nl.embed_cls", &m.nl.embed_cls.w, &m.nl.embed_cls.b},
      {"nl.embed_reg", &m.nl.embed_reg.w, &m.nl.embed_reg.b},
      {"nl.reduce_cls", &m.nl.reduce_cls.w, &m.nl.reduce_cls.b},
      {"nl.reduce_reg", &m.nl.reduce_reg.w, &m.nl.reduce_reg.b},
  };
}

json config_to_json(const ModelConfig& c) {
  return json{{"feature_channels", c.feature_channels},
              {"stride", c.stride},
              {"head_channels", c.head_channels},
              {"anchor_scales", c.anchor_scales},
              {"anchor_ratios", c.anchor_ratios},
              {"exemplar_px", c.exemplar_px},
              {"search_px", c.search_px},
              {"exemplar_kernel_cells", c.exemplar_kernel_cells},
              {"nl_kernel_cells", c.nl_kernel_cells},
              {"oov_buckets", c.oov_buckets}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.feature_channels = j.at("feature_channels").get<int>();
  c.stride = j.at("stride").get<int>();
  c.head_channels = j.at("head_channels").get<int>();
  c.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
  c.anchor_ratios = j.at("anchor_ratios").get<std::vector<double>>();
  c.exemplar_px = j.at("exemplar_px").get<int>();
  c.search_px = j.at("search_px").get<int>();
  c.exemplar_kernel_cells = j.at("exemplar_kernel_cells").get<int>();
  c.nl_kernel_cells = j.at("nl_kernel_cells").get<int>();
  c.oov_buckets = j.at("oov_buckets").get<int>();
  return c;
}

}  // namespace

void save_model(const Model& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  Model& m = const_cast<Model&>(model);  // refs only, nothing is mutated
  auto heads = head_refs(m);

  json manifest;
  manifest["format"] = "nltrack-model/1";
  manifest["seed"] = model.seed;
  manifest["config"] = config_to_json(model.cfg);
  manifest["vocabulary"] = "vocab.txt";
  manifest["weights"] = "weights.bin";
  json jheads = json::array();
  std::size_t offset = 0;
  std::ofstream wout(dir + "/weights.bin", std::ios::binary);
  require(wout.good(), "save_model: cannot open weights file in " + dir);
  for (const auto& h : heads) {
    json jh;
    jh["name"] = h.name;
    jh["w_offset"] = offset;
    jh["w_count"] = h.w->size();
    offset += h.w->size();
    jh["b_offset"] = offset;
    jh["b_count"] = h.b->size();
    offset += h.b->size();
    jheads.push_back(jh);
    wout.write(reinterpret_cast<const char*>(h.w->data()),
               static_cast<std::streamsize>(h.w->size() * sizeof(double)));
    wout.write(reinterpret_cast<const char*>(h.b->data()),
               static_cast<std::streamsize>(h.b->size() * sizeof(double)));
  }
  require(wout.good(), "save_model: short weights write in " + dir);
  manifest["heads"] = jheads;
  manifest["total_params"] = offset;

  model.vocab.save(dir + "/vocab.txt");
  std::ofstream mout(dir + "/manifest.json");
  require(mout.good(), "save_model: cannot open manifest in " + dir);
  mout << manifest.dump(2) << "\n";
}

Model load_model(const std::string& dir) {
  std::ifstream min(dir + "/manifest.json");
  require(min.good(), "load_model: cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    min >> manifest;
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_model: bad manifest in " + dir + ": " +
                                e.what());
  }
  require(manifest.value("format", "") == "nltrack-model/1",
          "load_model: unsupported bundle format in " + dir);
  const ModelConfig cfg = config_from_json(manifest.at("config"));
  Vocabulary vocab = Vocabulary::load(
      dir + "/" + manifest.at("vocabulary").get<std::string>(),
      cfg.oov_buckets);
  Model m = make_model(cfg, std::move(vocab), manifest.at("seed").get<std::uint64_t>());

  std::ifstream win(dir + "/" + manifest.at("weights").get<std::string>(),
                    std::ios::binary);
  require(win.good(), "load_model: cannot open weights in " + dir);
  auto heads = head_refs(m);
  const json& jheads = manifest.at("heads");
  require(jheads.size() == heads.size(),
          "load_model: head count mismatch in " + dir);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const json& jh = jheads[i];
    require(jh.at("name").get<std::string>() == heads[i].name &&
                jh.at("w_count").get<std::size_t>() == heads[i].w->size() &&
                jh.at("b_count").get<std::size_t>() == heads[i].b->size(),
            "load_model: head layout mismatch for " + heads[i].name);
    win.read(reinterpret_cast<char*>(heads[i].w->data()),
             static_cast<std::streamsize>(heads[i].w->size() * sizeof(double)));
    win.read(reinterpret_cast<char*>(heads[i].b->data()),
             static_cast<std::streamsize>(heads[i].b->size() * sizeof(double)));
  }
  require(win.good(), "load_model: truncated weights in " + dir);
  return m;
}

}  // namespace nltrack
