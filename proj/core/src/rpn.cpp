#include "nltrack/rpn.hpp"

#include <string>

#include "nltrack/common.hpp"

namespace nltrack {

BranchOutput nl_rpn_forward(const FeatureMap& search_feat,
                            const NLKernel& kernel, const NlHeads& heads) {
  require(kernel.cls.width == kernel.cls.height &&
              kernel.reg.width == kernel.reg.height &&
              kernel.cls.width == kernel.reg.width,
          "nl_rpn_forward: kernels must be square and equal sized, got cls " +
              kernel.cls.shape_str() + " reg " + kernel.reg.shape_str());
  const FeatureMap pc = heads.search_cls.apply(search_feat);
  const FeatureMap pr = heads.search_reg.apply(search_feat);
  FeatureMap kc = kernel.cls;
  FeatureMap kr = kernel.reg;
  subtract_channel_means(kc);
  subtract_channel_means(kr);
  const FeatureMap xc = depthwise_xcorr(pc, kc);
  const FeatureMap xr = depthwise_xcorr(pr, kr);
  return BranchOutput{ScoreMap::wrap(heads.reduce_cls.apply(xc)),
                      RegMap::wrap(heads.reduce_reg.apply(xr))};
}

BranchOutput siam_rpn_forward(const FeatureMap& search_feat,
                              const FeatureMap& exemplar_feat,
                              const VisualHeads& heads, int kernel_cells) {
  require(kernel_cells > 0, "siam_rpn_forward: non-positive kernel size");
  require(exemplar_feat.width >= kernel_cells &&
              exemplar_feat.height >= kernel_cells,
          "siam_rpn_forward: exemplar features " + exemplar_feat.shape_str() +
              " smaller than kernel " + std::to_string(kernel_cells));
  const FeatureMap pc = heads.search_cls.apply(search_feat);
  const FeatureMap pr = heads.search_reg.apply(search_feat);
  FeatureMap kc =
      central_crop(heads.exemplar_cls.apply(exemplar_feat), kernel_cells);
  FeatureMap kr =
      central_crop(heads.exemplar_reg.apply(exemplar_feat), kernel_cells);
  subtract_channel_means(kc);
  subtract_channel_means(kr);
  const FeatureMap xc = depthwise_xcorr(pc, kc);
  const FeatureMap xr = depthwise_xcorr(pr, kr);
  return BranchOutput{ScoreMap::wrap(heads.reduce_cls.apply(xc)),
                      RegMap::wrap(heads.reduce_reg.apply(xr))};
}

double peak_score(const ScoreMap& cls) {
  const FeatureMap p = foreground_softmax(cls);
  double best = 0.0;
  for (double v : p.data) best = std::max(best, v);
  return best;
}

std::int64_t select_best_exemplar(const std::vector<ScoredExemplar>& entries) {
  require(!entries.empty(),
          "select_best_exemplar: no exemplars, language-only fallback needed");
  bool found = false;
  double best_peak = 0.0;
  std::int64_t best_born = 0, best_id = 0;
  for (const auto& e : entries) {
    require(e.cls != nullptr, "select_best_exemplar: null score map");
    const double p = peak_score(*e.cls);
    const bool better =
        !found || p > best_peak ||
        (p == best_peak &&
         (e.born_at < best_born || (e.born_at == best_born && e.id < best_id)));
    if (better) {
      found = true;
      best_peak = p;
      best_born = e.born_at;
      best_id = e.id;
    }
  }
  return best_id;
}

Detection extract_detection(const ScoreMap& cls, const RegMap& reg,
                            const AnchorGrid& grid,
                            const std::optional<WindowSpec>& window) {
  grid.validate();
  require(cls.m.width == reg.m.width && cls.m.height == reg.m.height,
          "extract_detection: cls " + cls.m.shape_str() + " vs reg " +
              reg.m.shape_str());
  require(cls.num_anchors() == reg.num_anchors(),
          "extract_detection: anchor count mismatch, cls " +
              std::to_string(cls.num_anchors()) + " vs reg " +
              std::to_string(reg.num_anchors()));
  require(grid.feat_w == cls.m.width && grid.feat_h == cls.m.height,
          "extract_detection: grid " + std::to_string(grid.feat_w) + "x" +
              std::to_string(grid.feat_h) + " vs map " + cls.m.shape_str());
  require(grid.num_anchors_per_cell() == cls.num_anchors(),
          "extract_detection: grid k=" +
              std::to_string(grid.num_anchors_per_cell()) + " vs map k=" +
              std::to_string(cls.num_anchors()));

  const FeatureMap prob = foreground_softmax(cls);
  FeatureMap sel = prob;
  if (window) sel = gaussian_window(prob, window->cx, window->cy, window->sigma);

  const int k = cls.num_anchors();
  int bx = 0, by = 0, ba = 0;
  double best = -1.0;
  for (int y = 0; y < sel.height; ++y)
    for (int x = 0; x < sel.width; ++x)
      for (int a = 0; a < k; ++a)
        if (sel.at(x, y, a) > best) {
          best = sel.at(x, y, a);
          bx = x;
          by = y;
          ba = a;
        }

  const BBox anchor = grid.anchor_at(bx, by, ba);
  const RegDelta delta{reg.m.at(bx, by, 4 * ba), reg.m.at(bx, by, 4 * ba + 1),
                       reg.m.at(bx, by, 4 * ba + 2),
                       reg.m.at(bx, by, 4 * ba + 3)};
  return Detection{decode_box(anchor, delta), prob.at(bx, by, ba), bx, by, ba};
}

AnchorGrid visual_grid(const ModelConfig& cfg) {
  const int cells = cfg.search_cells() - cfg.exemplar_kernel_cells + 1;
  return AnchorGrid{cells, cells, cfg.stride, cfg.anchor_scales,
                    cfg.anchor_ratios};
}

AnchorGrid nl_grid(const ModelConfig& cfg) {
  const int cells = cfg.search_cells() - cfg.nl_kernel_cells + 1;
  return AnchorGrid{cells, cells, cfg.stride, cfg.anchor_scales,
                    cfg.anchor_ratios};
}

double corr_offset_px(int kernel_cells, int stride) {
  return 0.5 * (kernel_cells - 1) * stride;
}

}  // namespace nltrack
