#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nltrack/backends.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/tensor.hpp"

namespace nltrack {

struct BranchOutput {
  ScoreMap cls;
  RegMap reg;
};

// Language branch: project search features, correlate with the sentence
// kernel, reduce to per-anchor logits and regression deltas.
BranchOutput nl_rpn_forward(const FeatureMap& search_feat,
                            const NLKernel& kernel, const NlHeads& heads);

// Template branch: both sides projected into correlation space; the kernel
// is the central kernel_cells crop of the projected exemplar features.
BranchOutput siam_rpn_forward(const FeatureMap& search_feat,
                              const FeatureMap& exemplar_feat,
                              const VisualHeads& heads, int kernel_cells);

// Peak foreground probability over all cells and anchors.
double peak_score(const ScoreMap& cls);

struct ScoredExemplar {
  std::int64_t id = 0;
  std::int64_t born_at = 0;
  const ScoreMap* cls = nullptr;
};

// Highest peak wins; ties go to the earliest born_at, then lowest id, so the
// result does not depend on input order. Empty input is an error: the caller
// has to fall back to the language branch.
std::int64_t select_best_exemplar(const std::vector<ScoredExemplar>& entries);

struct WindowSpec {
  double cx = 0.0;  // in cells
  double cy = 0.0;
  double sigma = 1.0;
};

struct Detection {
  BBox box;  // same coordinate frame as the anchor grid
  double score = 0.0;  // pre-window foreground probability of the winner
  int cell_x = 0;
  int cell_y = 0;
  int anchor = 0;
};

// Foreground softmax, optional attention window, argmax, decode. Ties break
// row major (then anchor index). The returned score is always the
// *unwindowed* probability of the winning anchor.
Detection extract_detection(const ScoreMap& cls, const RegMap& reg,
                            const AnchorGrid& grid,
                            const std::optional<WindowSpec>& window);

// Anchor grids matching each branch's correlation output. Grid coordinates
// put cell (i, j) at ((i+0.5)s, (j+0.5)s); add corr_offset_px to reach crop
// coordinates, since output cell (0, 0) sits under the kernel center rather
// than the crop corner.
AnchorGrid visual_grid(const ModelConfig& cfg);
AnchorGrid nl_grid(const ModelConfig& cfg);
double corr_offset_px(int kernel_cells, int stride);

}  // namespace nltrack
