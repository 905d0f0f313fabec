#include "nltrack/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "nltrack/common.hpp"
#include "nltrack/rpn.hpp"

namespace nltrack {

namespace {

namespace fs = std::filesystem;

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t v[3] = {seed, a, b};
  return fnv1a(v, sizeof v);
}

// Seeded uniform subsample of at most `cap` entries, returned ascending so
// downstream iteration order is canonical.
std::vector<int> subsample(std::vector<int> pool, int cap,
                           std::mt19937_64& rng) {
  if (static_cast<int>(pool.size()) > cap) {
    for (int i = 0; i < cap; ++i) {
      std::uniform_int_distribution<int> pick(
          i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[static_cast<std::size_t>(i)],
                pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(cap));
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

void check_finite(const FeatureMap& m, const char* what) {
  for (double v : m.data)
    require(std::isfinite(v), std::string("rpn_loss: non-finite ") + what);
}

}  // namespace

AnchorAssignment assign_anchors(const AnchorGrid& grid, const BBox& target,
                                std::uint64_t seed, int max_pos, int max_neg) {
  grid.validate();
  require(max_pos >= 0 && max_neg >= 0, "assign_anchors: negative caps");
  require(target.w > 0.0 && target.h > 0.0,
          "assign_anchors: degenerate target box");
  const std::vector<BBox> anchors = gen_anchors(grid);
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double v = iou(anchors[i], target);
    if (v > 0.7) {
      pos.push_back(static_cast<int>(i));
    } else if (v < 0.3) {
      neg.push_back(static_cast<int>(i));
    }
  }
  std::mt19937_64 rng(seed);
  AnchorAssignment asg;
  asg.positives = subsample(std::move(pos), max_pos, rng);
  asg.negatives = subsample(std::move(neg), max_neg, rng);
  asg.targets.reserve(asg.positives.size());
  for (int i : asg.positives)
    asg.targets.push_back(
        encode_box(anchors[static_cast<std::size_t>(i)], target));
  asg.skip = asg.positives.empty();
  return asg;
}

LossTerms rpn_loss(const ScoreMap& cls, const RegMap& reg,
                   const AnchorAssignment& asg, double lambda_reg,
                   FeatureMap* d_cls, FeatureMap* d_reg) {
  require(cls.m.width == reg.m.width && cls.m.height == reg.m.height,
          "rpn_loss: cls " + cls.m.shape_str() + " vs reg " +
              reg.m.shape_str());
  require(cls.num_anchors() == reg.num_anchors(),
          "rpn_loss: anchor count mismatch, cls " +
              std::to_string(cls.num_anchors()) + " vs reg " +
              std::to_string(reg.num_anchors()));
  require(std::isfinite(lambda_reg) && lambda_reg >= 0.0,
          "rpn_loss: regression weight must be finite and non-negative");
  require(asg.targets.size() == asg.positives.size(),
          "rpn_loss: regression targets misaligned with positives");
  check_finite(cls.m, "classification logits");
  check_finite(reg.m, "regression outputs");

  const int k = cls.num_anchors();
  const int w = cls.m.width;
  const int total_anchors = w * cls.m.height * k;
  auto split = [&](int flat, int& x, int& y, int& a) {
    require(flat >= 0 && flat < total_anchors,
            "rpn_loss: anchor index " + std::to_string(flat) +
                " outside map with " + std::to_string(total_anchors) +
                " anchors");
    a = flat % k;
    const int cell = flat / k;
    x = cell % w;
    y = cell / w;
  };

  if (d_cls) *d_cls = FeatureMap(cls.m.width, cls.m.height, 2 * k);
  if (d_reg) *d_reg = FeatureMap(reg.m.width, reg.m.height, 4 * k);

  LossTerms t;
  const double n_samples =
      static_cast<double>(asg.positives.size() + asg.negatives.size());
  if (n_samples > 0.0) {
    double ce_sum = 0.0;
    auto ce_at = [&](int flat, bool fg) {
      int x, y, a;
      split(flat, x, y, a);
      const double zb = cls.m.at(x, y, 2 * a);
      const double zf = cls.m.at(x, y, 2 * a + 1);
      const double peak = std::max(zb, zf);
      const double lse =
          peak + std::log(std::exp(zb - peak) + std::exp(zf - peak));
      ce_sum += lse - (fg ? zf : zb);
      if (d_cls) {
        const double pf = std::exp(zf - lse);
        const double pb = std::exp(zb - lse);
        d_cls->at(x, y, 2 * a + 1) += (pf - (fg ? 1.0 : 0.0)) / n_samples;
        d_cls->at(x, y, 2 * a) += (pb - (fg ? 0.0 : 1.0)) / n_samples;
      }
    };
    for (int i : asg.positives) ce_at(i, true);
    for (int i : asg.negatives) ce_at(i, false);
    t.cls = ce_sum / n_samples;
  }

  if (!asg.positives.empty() && lambda_reg > 0.0) {
    double reg_sum = 0.0;
    const double n_pos = static_cast<double>(asg.positives.size());
    for (std::size_t p = 0; p < asg.positives.size(); ++p) {
      int x, y, a;
      split(asg.positives[p], x, y, a);
      const double tgt[4] = {asg.targets[p].dx, asg.targets[p].dy,
                             asg.targets[p].dw, asg.targets[p].dh};
      for (int c = 0; c < 4; ++c) {
        const double r = reg.m.at(x, y, 4 * a + c) - tgt[c];
        reg_sum += std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
        if (d_reg)
          d_reg->at(x, y, 4 * a + c) +=
              lambda_reg * std::clamp(r, -1.0, 1.0) / n_pos;
      }
    }
    t.reg = lambda_reg * reg_sum / n_pos;
  }

  t.total = t.cls + t.reg;
  return t;
}

PathCache path_forward(const FeatureMap& search_feat,
                       const ProjectionHead& search_head,
                       const FeatureMap& kernel, const ProjectionHead& reduce) {
  PathCache c;
  c.search_proj = search_head.apply(search_feat);
  c.kernel = kernel;
  subtract_channel_means(c.kernel);
  c.corr = depthwise_xcorr(c.search_proj, c.kernel);
  c.out = reduce.apply(c.corr);
  return c;
}

PathGrads path_backward(const FeatureMap& search_feat,
                        const ProjectionHead& search_head,
                        const ProjectionHead& reduce, const PathCache& cache,
                        const FeatureMap& d_out) {
  require(d_out.width == cache.out.width &&
              d_out.height == cache.out.height &&
              d_out.channels == cache.out.channels,
          "path_backward: gradient " + d_out.shape_str() + " vs output " +
              cache.out.shape_str());
  require(search_feat.width == cache.search_proj.width &&
              search_feat.height == cache.search_proj.height &&
              search_feat.channels == search_head.in_ch,
          "path_backward: search features " + search_feat.shape_str() +
              " do not match the cached forward pass");

  const int corr_ch = reduce.in_ch;
  const int out_ch = reduce.out_ch;
  PathGrads g;
  g.reduce.w.assign(reduce.w.size(), 0.0);
  g.reduce.b.assign(reduce.b.size(), 0.0);

  // Reduction is a 1x1 projection: out(i,j,q) = sum_m corr(i,j,m) w[m,q] + b.
  FeatureMap d_corr(cache.corr.width, cache.corr.height, corr_ch);
  for (int j = 0; j < cache.corr.height; ++j) {
    for (int i = 0; i < cache.corr.width; ++i) {
      const double* cor = cache.corr.cell(i, j);
      const double* dob = d_out.cell(i, j);
      double* dco = d_corr.cell(i, j);
      for (int q = 0; q < out_ch; ++q)
        g.reduce.b[static_cast<std::size_t>(q)] += dob[q];
      for (int m = 0; m < corr_ch; ++m) {
        const std::size_t row = static_cast<std::size_t>(m) * out_ch;
        double acc = 0.0;
        for (int q = 0; q < out_ch; ++q) {
          g.reduce.w[row + static_cast<std::size_t>(q)] += cor[m] * dob[q];
          acc += reduce.w[row + static_cast<std::size_t>(q)] * dob[q];
        }
        dco[m] = acc;
      }
    }
  }

  // Correlation: corr(i,j,m) = sum_{u,v} proj(i+u, j+v, m) kernel(u,v,m).
  const FeatureMap& kern = cache.kernel;
  const FeatureMap& proj = cache.search_proj;
  g.d_kernel = FeatureMap(kern.width, kern.height, kern.channels);
  FeatureMap d_proj(proj.width, proj.height, proj.channels);
  for (int j = 0; j < d_corr.height; ++j) {
    for (int i = 0; i < d_corr.width; ++i) {
      const double* dc = d_corr.cell(i, j);
      for (int v = 0; v < kern.height; ++v) {
        for (int u = 0; u < kern.width; ++u) {
          const double* kc = kern.cell(u, v);
          const double* pc = proj.cell(i + u, j + v);
          double* dk = g.d_kernel.cell(u, v);
          double* dp = d_proj.cell(i + u, j + v);
          for (int m = 0; m < corr_ch; ++m) {
            dk[m] += pc[m] * dc[m];
            dp[m] += kc[m] * dc[m];
          }
        }
      }
    }
  }
  // Centering is linear, so its adjoint is centering the kernel gradient.
  subtract_channel_means(g.d_kernel);

  // Search projection: proj(x,y,m) = sum_c feat(x,y,c) w[c,m] + b[m].
  g.search_head.w.assign(search_head.w.size(), 0.0);
  g.search_head.b.assign(search_head.b.size(), 0.0);
  for (int y = 0; y < proj.height; ++y) {
    for (int x = 0; x < proj.width; ++x) {
      const double* s = search_feat.cell(x, y);
      const double* dp = d_proj.cell(x, y);
      for (int m = 0; m < corr_ch; ++m)
        g.search_head.b[static_cast<std::size_t>(m)] += dp[m];
      for (int c = 0; c < search_head.in_ch; ++c) {
        const std::size_t row = static_cast<std::size_t>(c) * corr_ch;
        const double sv = s[c];
        for (int m = 0; m < corr_ch; ++m)
          g.search_head.w[row + static_cast<std::size_t>(m)] += sv * dp[m];
      }
    }
  }
  return g;
}

BranchCache visual_forward(const FeatureMap& search_feat,
                           const FeatureMap& exemplar_feat,
                           const VisualHeads& heads, int kernel_cells) {
  const FeatureMap kc =
      central_crop(heads.exemplar_cls.apply(exemplar_feat), kernel_cells);
  const FeatureMap kr =
      central_crop(heads.exemplar_reg.apply(exemplar_feat), kernel_cells);
  BranchCache c;
  c.cls = path_forward(search_feat, heads.search_cls, kc, heads.reduce_cls);
  c.reg = path_forward(search_feat, heads.search_reg, kr, heads.reduce_reg);
  return c;
}

BranchCache nl_forward(const FeatureMap& search_feat,
                       const std::vector<double>& embedding,
                       const NlHeads& heads) {
  const NLKernel kern = build_nl_kernel(embedding, heads);
  BranchCache c;
  c.cls =
      path_forward(search_feat, heads.search_cls, kern.cls, heads.reduce_cls);
  c.reg =
      path_forward(search_feat, heads.search_reg, kern.reg, heads.reduce_reg);
  return c;
}

namespace {

// The kernel is the central crop of the projected exemplar; only the cropped
// cells carry gradient back to the exemplar head.
HeadGrad exemplar_head_grad(const FeatureMap& exemplar_feat,
                            const ProjectionHead& head, int kernel_cells,
                            const FeatureMap& d_kernel) {
  HeadGrad g;
  g.w.assign(head.w.size(), 0.0);
  g.b.assign(head.b.size(), 0.0);
  const int x0 = (exemplar_feat.width - kernel_cells) / 2;
  const int y0 = (exemplar_feat.height - kernel_cells) / 2;
  for (int v = 0; v < kernel_cells; ++v) {
    for (int u = 0; u < kernel_cells; ++u) {
      const double* e = exemplar_feat.cell(x0 + u, y0 + v);
      const double* dk = d_kernel.cell(u, v);
      for (int m = 0; m < head.out_ch; ++m)
        g.b[static_cast<std::size_t>(m)] += dk[m];
      for (int c = 0; c < head.in_ch; ++c) {
        const std::size_t row = static_cast<std::size_t>(c) * head.out_ch;
        for (int m = 0; m < head.out_ch; ++m)
          g.w[row + static_cast<std::size_t>(m)] += e[c] * dk[m];
      }
    }
  }
  return g;
}

// The language kernel is linear in the embedding, so its weight gradient is
// the outer product of embedding and kernel gradient.
HeadGrad kernel_head_grad(const std::vector<double>& embedding,
                          const KernelHead& head, const FeatureMap& d_kernel) {
  HeadGrad g;
  g.w.assign(head.w.size(), 0.0);
  g.b.assign(head.b.size(), 0.0);
  const int ks = head.kernel_size();
  for (int j = 0; j < ks; ++j) {
    const double dk = d_kernel.data[static_cast<std::size_t>(j)];
    g.b[static_cast<std::size_t>(j)] = dk;
    if (dk == 0.0) continue;
    for (int d = 0; d < head.embed_dim; ++d)
      g.w[static_cast<std::size_t>(d) * ks + static_cast<std::size_t>(j)] =
          embedding[static_cast<std::size_t>(d)] * dk;
  }
  return g;
}

}  // namespace

VisualGrads visual_backward(const FeatureMap& search_feat,
                            const FeatureMap& exemplar_feat,
                            const VisualHeads& heads, int kernel_cells,
                            const BranchCache& cache, const FeatureMap& d_cls,
                            const FeatureMap& d_reg) {
  PathGrads pc = path_backward(search_feat, heads.search_cls, heads.reduce_cls,
                               cache.cls, d_cls);
  PathGrads pr = path_backward(search_feat, heads.search_reg, heads.reduce_reg,
                               cache.reg, d_reg);
  VisualGrads g;
  g.search_cls = std::move(pc.search_head);
  g.search_reg = std::move(pr.search_head);
  g.reduce_cls = std::move(pc.reduce);
  g.reduce_reg = std::move(pr.reduce);
  g.exemplar_cls = exemplar_head_grad(exemplar_feat, heads.exemplar_cls,
                                      kernel_cells, pc.d_kernel);
  g.exemplar_reg = exemplar_head_grad(exemplar_feat, heads.exemplar_reg,
                                      kernel_cells, pr.d_kernel);
  return g;
}

NlGrads nl_backward(const FeatureMap& search_feat,
                    const std::vector<double>& embedding, const NlHeads& heads,
                    const BranchCache& cache, const FeatureMap& d_cls,
                    const FeatureMap& d_reg) {
  PathGrads pc = path_backward(search_feat, heads.search_cls, heads.reduce_cls,
                               cache.cls, d_cls);
  PathGrads pr = path_backward(search_feat, heads.search_reg, heads.reduce_reg,
                               cache.reg, d_reg);
  NlGrads g;
  g.search_cls = std::move(pc.search_head);
  g.search_reg = std::move(pr.search_head);
  g.reduce_cls = std::move(pc.reduce);
  g.reduce_reg = std::move(pr.reduce);
  g.embed_cls = kernel_head_grad(embedding, heads.embed_cls, pc.d_kernel);
  g.embed_reg = kernel_head_grad(embedding, heads.embed_reg, pr.d_kernel);
  return g;
}

namespace {

struct Prepared {
  FeatureMap exemplar_feat;
  FeatureMap search_feat;
  std::vector<double> embedding;  // empty when the query is absent
  AnchorAssignment visual_asg;
  AnchorAssignment nl_asg;
};

void add_into(HeadGrad& acc, const HeadGrad& g) {
  if (acc.w.empty()) {
    acc.w.assign(g.w.size(), 0.0);
    acc.b.assign(g.b.size(), 0.0);
  }
  require(acc.w.size() == g.w.size() && acc.b.size() == g.b.size(),
          "fit: gradient accumulator size mismatch");
  for (std::size_t i = 0; i < g.w.size(); ++i) acc.w[i] += g.w[i];
  for (std::size_t i = 0; i < g.b.size(); ++i) acc.b[i] += g.b[i];
}

void add_into(VisualGrads& acc, const VisualGrads& g) {
  add_into(acc.search_cls, g.search_cls);
  add_into(acc.search_reg, g.search_reg);
  add_into(acc.exemplar_cls, g.exemplar_cls);
  add_into(acc.exemplar_reg, g.exemplar_reg);
  add_into(acc.reduce_cls, g.reduce_cls);
  add_into(acc.reduce_reg, g.reduce_reg);
}

void add_into(NlGrads& acc, const NlGrads& g) {
  add_into(acc.search_cls, g.search_cls);
  add_into(acc.search_reg, g.search_reg);
  add_into(acc.embed_cls, g.embed_cls);
  add_into(acc.embed_reg, g.embed_reg);
  add_into(acc.reduce_cls, g.reduce_cls);
  add_into(acc.reduce_reg, g.reduce_reg);
}

void step_head(ProjectionHead& h, const HeadGrad& g, double lr) {
  require(h.w.size() == g.w.size() && h.b.size() == g.b.size(),
          "fit: update size mismatch");
  for (std::size_t i = 0; i < h.w.size(); ++i) h.w[i] -= lr * g.w[i];
  for (std::size_t i = 0; i < h.b.size(); ++i) h.b[i] -= lr * g.b[i];
}

void step_head(KernelHead& h, const HeadGrad& g, double lr) {
  require(h.w.size() == g.w.size() && h.b.size() == g.b.size(),
          "fit: update size mismatch");
  for (std::size_t i = 0; i < h.w.size(); ++i) h.w[i] -= lr * g.w[i];
  for (std::size_t i = 0; i < h.b.size(); ++i) h.b[i] -= lr * g.b[i];
}

void step_heads(VisualHeads& h, const VisualGrads& g, double lr) {
  step_head(h.search_cls, g.search_cls, lr);
  step_head(h.search_reg, g.search_reg, lr);
  step_head(h.exemplar_cls, g.exemplar_cls, lr);
  step_head(h.exemplar_reg, g.exemplar_reg, lr);
  step_head(h.reduce_cls, g.reduce_cls, lr);
  step_head(h.reduce_reg, g.reduce_reg, lr);
}

void step_heads(NlHeads& h, const NlGrads& g, double lr) {
  step_head(h.search_cls, g.search_cls, lr);
  step_head(h.search_reg, g.search_reg, lr);
  step_head(h.embed_cls, g.embed_cls, lr);
  step_head(h.embed_reg, g.embed_reg, lr);
  step_head(h.reduce_cls, g.reduce_cls, lr);
  step_head(h.reduce_reg, g.reduce_reg, lr);
}

bool finite_outputs(const BranchCache& c) {
  for (double v : c.cls.out.data)
    if (!std::isfinite(v)) return false;
  for (double v : c.reg.out.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Mean loss over every contributing (example, branch) pair, no gradients.
// NaN signals divergence so the caller can fall back to its checkpoint.
double dataset_loss(const Model& model, const std::vector<Prepared>& prep,
                    double lambda_reg) {
  double total = 0.0;
  std::size_t terms = 0;
  for (const auto& p : prep) {
    if (!p.visual_asg.skip) {
      const BranchCache c =
          visual_forward(p.search_feat, p.exemplar_feat, model.visual,
                         model.cfg.exemplar_kernel_cells);
      if (!finite_outputs(c)) return std::nan("");
      total += rpn_loss(ScoreMap::wrap(c.cls.out), RegMap::wrap(c.reg.out),
                        p.visual_asg, lambda_reg)
                   .total;
      ++terms;
    }
    if (!p.embedding.empty() && !p.nl_asg.skip) {
      const BranchCache c = nl_forward(p.search_feat, p.embedding, model.nl);
      if (!finite_outputs(c)) return std::nan("");
      total += rpn_loss(ScoreMap::wrap(c.cls.out), RegMap::wrap(c.reg.out),
                        p.nl_asg, lambda_reg)
                   .total;
      ++terms;
    }
  }
  require(terms > 0, "fit: no example overlaps any anchor");
  return total / static_cast<double>(terms);
}

}  // namespace

FitResult fit(const Model& init, const std::vector<TrainingTriplet>& dataset,
              const FitOptions& opt) {
  require(!dataset.empty(), "fit: empty dataset");
  require(opt.epochs > 0, "fit: need at least one epoch");
  require(opt.batch_size > 0, "fit: non-positive batch size");
  require(std::isfinite(opt.learning_rate) && opt.learning_rate > 0.0,
          "fit: bad learning rate");
  init.cfg.validate();

  const ModelConfig& cfg = init.cfg;
  const ToyFeatureExtractor extractor(cfg.stride);
  require(extractor.channels() == cfg.feature_channels,
          "fit: model config expects " +
              std::to_string(cfg.feature_channels) +
              " feature channels, backbone yields " +
              std::to_string(extractor.channels()));

  const AnchorGrid vgrid = visual_grid(cfg);
  const AnchorGrid ngrid = nl_grid(cfg);
  const double voff = corr_offset_px(cfg.exemplar_kernel_cells, cfg.stride);
  const double noff = corr_offset_px(cfg.nl_kernel_cells, cfg.stride);

  std::vector<Prepared> prep;
  prep.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const TrainingTriplet& t = dataset[i];
    require(t.exemplar.width == cfg.exemplar_px &&
                t.exemplar.height == cfg.exemplar_px &&
                t.search.width == cfg.search_px &&
                t.search.height == cfg.search_px,
            "fit: crop sizes of example " + std::to_string(i) +
                " do not match the model config");
    Prepared p;
    p.exemplar_feat = extractor.extract(t.exemplar);
    p.search_feat = extractor.extract(t.search);
    if (!t.query.empty()) p.embedding = embed_sentence(t.query, init.vocab);
    BBox vt = t.target;
    vt.cx -= voff;
    vt.cy -= voff;
    p.visual_asg = assign_anchors(vgrid, vt, mix(opt.seed, i, 0),
                                  opt.max_positive, opt.max_negative);
    BBox nt = t.target;
    nt.cx -= noff;
    nt.cy -= noff;
    p.nl_asg = assign_anchors(ngrid, nt, mix(opt.seed, i, 1),
                              opt.max_positive, opt.max_negative);
    prep.push_back(std::move(p));
  }

  Model cur = init;
  FitResult res;
  res.model = init;
  const int n = static_cast<int>(prep.size());
  for (int e = 0; e < opt.epochs; ++e) {
    const double lr =
        opt.learning_rate * (e >= opt.epochs / 2 ? 0.5 : 1.0);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(opt.seed, 0x65706f6368ULL,
                            static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);

    for (int start = 0; start < n; start += opt.batch_size) {
      const int stop = std::min(n, start + opt.batch_size);
      VisualGrads vacc;
      NlGrads nacc;
      int vcount = 0, ncount = 0;
      for (int pos = start; pos < stop; ++pos) {
        const Prepared& p = prep[static_cast<std::size_t>(order[
            static_cast<std::size_t>(pos)])];
        if (!p.visual_asg.skip) {
          const BranchCache c =
              visual_forward(p.search_feat, p.exemplar_feat, cur.visual,
                             cfg.exemplar_kernel_cells);
          if (!finite_outputs(c)) {
            res.diverged = true;
            return res;
          }
          FeatureMap dc, dr;
          rpn_loss(ScoreMap::wrap(c.cls.out), RegMap::wrap(c.reg.out),
                   p.visual_asg, opt.lambda_reg, &dc, &dr);
          add_into(vacc, visual_backward(p.search_feat, p.exemplar_feat,
                                         cur.visual,
                                         cfg.exemplar_kernel_cells, c, dc,
                                         dr));
          ++vcount;
        }
        if (!p.embedding.empty() && !p.nl_asg.skip) {
          const BranchCache c = nl_forward(p.search_feat, p.embedding, cur.nl);
          if (!finite_outputs(c)) {
            res.diverged = true;
            return res;
          }
          FeatureMap dc, dr;
          rpn_loss(ScoreMap::wrap(c.cls.out), RegMap::wrap(c.reg.out),
                   p.nl_asg, opt.lambda_reg, &dc, &dr);
          add_into(nacc, nl_backward(p.search_feat, p.embedding, cur.nl, c,
                                     dc, dr));
          ++ncount;
        }
      }
      if (vcount > 0) step_heads(cur.visual, vacc, lr / vcount);
      if (ncount > 0) step_heads(cur.nl, nacc, lr / ncount);
    }

    const double loss = dataset_loss(cur, prep, opt.lambda_reg);
    if (!std::isfinite(loss)) {
      res.diverged = true;
      return res;  // res.model still holds the last finite checkpoint
    }
    res.epoch_losses.push_back(loss);
    res.model = cur;
  }
  return res;
}

Vocabulary build_vocabulary(const std::vector<std::string>& sentences,
                            int oov_buckets) {
  require(oov_buckets > 0, "build_vocabulary: need at least one OOV bucket");
  // Same split as the embedder: lowercase alphanumeric runs.
  std::set<std::string> uniq;
  for (const auto& s : sentences) {
    std::string token;
    auto flush = [&] {
      if (!token.empty()) {
        uniq.insert(token);
        token.clear();
      }
    };
    for (char ch : s) {
      if (std::isalnum(static_cast<unsigned char>(ch))) {
        token.push_back(
            static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      } else {
        flush();
      }
    }
    flush();
  }
  Vocabulary v;
  v.tokens.assign(uniq.begin(), uniq.end());
  v.oov_buckets = oov_buckets;
  return v;
}

std::vector<TrainingTriplet> make_training_set(
    const std::vector<ScenarioSpec>& scenarios, const ModelConfig& cfg,
    const TripletSetOptions& opt) {
  require(!scenarios.empty(), "make_training_set: no scenarios");
  require(opt.per_scenario > 0, "make_training_set: non-positive count");
  require(opt.no_query_fraction >= 0.0 && opt.no_query_fraction <= 1.0 &&
              opt.jitter_fraction >= 0.0 && opt.jitter_fraction <= 1.0,
          "make_training_set: fractions must lie in [0, 1]");
  require(opt.max_gap >= 1, "make_training_set: gap must be positive");
  cfg.validate();

  std::vector<TrainingTriplet> out;
  out.reserve(scenarios.size() * static_cast<std::size_t>(opt.per_scenario));
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const ScenarioSpec& sc = scenarios[s];
    validate_scenario(sc);
    std::vector<Image> frames(static_cast<std::size_t>(sc.length));
    std::vector<BBox> boxes(static_cast<std::size_t>(sc.length));
    std::vector<int> visible;
    const ObjectSpec& target = target_object(sc);
    for (int t = 0; t < sc.length; ++t) {
      frames[static_cast<std::size_t>(t)] = render_frame(sc, t);
      boxes[static_cast<std::size_t>(t)] = object_box(target, t);
      if (!full_occlusion(sc, t)) visible.push_back(t);
    }
    require(visible.size() >= 2, "make_training_set: scenario '" + sc.name +
                                     "' never shows the target twice");

    std::mt19937_64 rng(
        mix(opt.seed, 0x74726970ULL, static_cast<std::uint64_t>(s)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::string sentence = nl_description(sc);
    for (int i = 0; i < opt.per_scenario; ++i) {
      std::uniform_int_distribution<std::size_t> any(0, visible.size() - 1);
      const int ti = visible[any(rng)];
      std::vector<int> near;
      for (int t : visible)
        if (t != ti && std::abs(t - ti) <= opt.max_gap) near.push_back(t);
      int tj = ti;
      if (!near.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, near.size() - 1);
        tj = near[pick(rng)];
      }

      const BBox bi = boxes[static_cast<std::size_t>(ti)];
      const BBox bj = boxes[static_cast<std::size_t>(tj)];
      const double search_side = context_side(bj) * cfg.search_px /
                                 static_cast<double>(cfg.exemplar_px);
      const double jx =
          (2.0 * unit(rng) - 1.0) * opt.jitter_fraction * context_side(bj);
      const double jy =
          (2.0 * unit(rng) - 1.0) * opt.jitter_fraction * context_side(bj);

      TrainingTriplet trip;
      trip.exemplar = crop_resize(frames[static_cast<std::size_t>(ti)], bi.cx,
                                  bi.cy, context_side(bi), cfg.exemplar_px)
                          .patch;
      CropResult sr = crop_resize(frames[static_cast<std::size_t>(tj)],
                                  bj.cx + jx, bj.cy + jy, search_side,
                                  cfg.search_px);
      trip.search = std::move(sr.patch);
      trip.target = sr.transform.frame_to_crop(bj);
      if (unit(rng) >= opt.no_query_fraction) trip.query = sentence;
      out.push_back(std::move(trip));
    }
  }
  return out;
}

void save_triplets(const std::vector<TrainingTriplet>& triplets,
                   const std::string& dir) {
  require(!triplets.empty(), "save_triplets: nothing to save");
  fs::create_directories(fs::path(dir) / "crops");
  nlohmann::json man;
  man["format"] = "nltrack-triplets/1";
  auto& list = man["triplets"] = nlohmann::json::array();
  char name[48];
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const TrainingTriplet& t = triplets[i];
    std::snprintf(name, sizeof name, "crops/%04zu_z.ppm", i);
    const std::string zrel = name;
    std::snprintf(name, sizeof name, "crops/%04zu_x.ppm", i);
    const std::string xrel = name;
    save_ppm(t.exemplar, (fs::path(dir) / zrel).string());
    save_ppm(t.search, (fs::path(dir) / xrel).string());
    nlohmann::json e;
    e["exemplar"] = zrel;
    e["search"] = xrel;
    e["target"] = {t.target.x1(), t.target.y1(), t.target.w, t.target.h};
    if (!t.query.empty()) e["query"] = t.query;
    list.push_back(std::move(e));
  }
  const fs::path manifest = fs::path(dir) / "manifest.json";
  std::ofstream outf(manifest);
  require(outf.good(), "save_triplets: cannot write " + manifest.string());
  outf << man.dump(2) << "\n";
  require(outf.good(), "save_triplets: write failed for " + manifest.string());
}

std::vector<TrainingTriplet> load_triplets(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), "load_triplets: cannot open " + manifest_path);
  nlohmann::json man;
  try {
    in >> man;
  } catch (const std::exception& ex) {
    throw std::invalid_argument("load_triplets: bad JSON in " + manifest_path +
                                ": " + ex.what());
  }
  require(man.value("format", std::string()) == "nltrack-triplets/1",
          "load_triplets: unrecognised manifest format in " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<TrainingTriplet> out;
  for (const auto& e : man.at("triplets")) {
    TrainingTriplet t;
    t.exemplar = load_ppm((base / e.at("exemplar").get<std::string>()).string());
    t.search = load_ppm((base / e.at("search").get<std::string>()).string());
    const auto& tb = e.at("target");
    require(tb.is_array() && tb.size() == 4,
            "load_triplets: target must be [x, y, w, h] in " + manifest_path);
    t.target = BBox::from_xywh(tb[0].get<double>(), tb[1].get<double>(),
                               tb[2].get<double>(), tb[3].get<double>());
    t.query = e.value("query", std::string());
    out.push_back(std::move(t));
  }
  require(!out.empty(), "load_triplets: empty triplet list in " + manifest_path);
  return out;
}

}  // namespace nltrack
