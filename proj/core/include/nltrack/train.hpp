#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nltrack/backends.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/image.hpp"
#include "nltrack/synth.hpp"
#include "nltrack/tensor.hpp"

namespace nltrack {

// One supervised example: a template crop, a search crop from another frame
// of the same track, an optional sentence, and where the target sits inside
// the search crop.
struct TrainingTriplet {
  Image exemplar;
  Image search;
  std::string query;  // empty when the language cue is absent
  BBox target;        // search-crop pixel coordinates
};

// Anchors sampled for one example. Flat indices follow the generation order
// (cell_y * feat_w + cell_x) * k + anchor. `targets` aligns with
// `positives`; `skip` marks examples with no qualifying positive anchor.
struct AnchorAssignment {
  std::vector<int> positives;
  std::vector<int> negatives;
  std::vector<RegDelta> targets;
  bool skip = false;
};

// Positives overlap the target above 0.7 IoU, negatives below 0.3. Both
// sets are seeded uniform subsamples of everything qualifying won by the
// caps, so reruns with one seed pick identical anchors.
AnchorAssignment assign_anchors(const AnchorGrid& grid, const BBox& target,
                                std::uint64_t seed, int max_pos = 16,
                                int max_neg = 48);

struct LossTerms {
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
};

// Mean cross entropy over all sampled anchors plus lambda_reg times the
// mean over positives of the smooth L1 distance (kink at 1) between the
// regression output and the encoded target. Non-null d_cls / d_reg receive
// the gradients with respect to the raw maps, same shapes as cls / reg.
LossTerms rpn_loss(const ScoreMap& cls, const RegMap& reg,
                   const AnchorAssignment& asg, double lambda_reg = 1.0,
                   FeatureMap* d_cls = nullptr, FeatureMap* d_reg = nullptr);

// Intermediates of one projection, correlation, reduction pass, kept so the
// backward sweep never recomputes the forward one. `kernel` holds the
// zero-mean form actually correlated, not the raw argument.
struct PathCache {
  FeatureMap search_proj;
  FeatureMap kernel;
  FeatureMap corr;
  FeatureMap out;
};

// Centers the kernel per channel before correlating, matching the inference
// forward passes.
PathCache path_forward(const FeatureMap& search_feat,
                       const ProjectionHead& search_head,
                       const FeatureMap& kernel, const ProjectionHead& reduce);

// Gradient buffers mirroring a head's weight and bias layout.
struct HeadGrad {
  std::vector<double> w;
  std::vector<double> b;
};

struct PathGrads {
  HeadGrad search_head;
  FeatureMap d_kernel;
  HeadGrad reduce;
};

// Backpropagates d_out through the reduction, the correlation, the kernel
// centering and the search projection. The kernel gradient is with respect
// to the raw (uncentered) kernel, for the caller to push through whatever
// produced it.
PathGrads path_backward(const FeatureMap& search_feat,
                        const ProjectionHead& search_head,
                        const ProjectionHead& reduce, const PathCache& cache,
                        const FeatureMap& d_out);

// Classification and regression paths of one branch. Outputs match the
// inference forward passes exactly.
struct BranchCache {
  PathCache cls;
  PathCache reg;
};

BranchCache visual_forward(const FeatureMap& search_feat,
                           const FeatureMap& exemplar_feat,
                           const VisualHeads& heads, int kernel_cells);
BranchCache nl_forward(const FeatureMap& search_feat,
                       const std::vector<double>& embedding,
                       const NlHeads& heads);

struct VisualGrads {
  HeadGrad search_cls, search_reg;
  HeadGrad exemplar_cls, exemplar_reg;
  HeadGrad reduce_cls, reduce_reg;
};

struct NlGrads {
  HeadGrad search_cls, search_reg;
  HeadGrad embed_cls, embed_reg;
  HeadGrad reduce_cls, reduce_reg;
};

VisualGrads visual_backward(const FeatureMap& search_feat,
                            const FeatureMap& exemplar_feat,
                            const VisualHeads& heads, int kernel_cells,
                            const BranchCache& cache, const FeatureMap& d_cls,
                            const FeatureMap& d_reg);
NlGrads nl_backward(const FeatureMap& search_feat,
                    const std::vector<double>& embedding, const NlHeads& heads,
                    const BranchCache& cache, const FeatureMap& d_cls,
                    const FeatureMap& d_reg);

struct FitOptions {
  int epochs = 40;
  double learning_rate = 0.01;  // halved once at the epoch midpoint
  int batch_size = 32;
  double lambda_reg = 1.0;
  int max_positive = 16;
  int max_negative = 48;
  std::uint64_t seed = 0;
};

struct FitResult {
  Model model;
  std::vector<double> epoch_losses;  // full-dataset mean after each epoch
  bool diverged = false;  // stopped early at the last finite checkpoint
};

// Mini-batch gradient descent on both branches' heads. Examples without a
// query contribute nothing to the language branch; examples whose target
// overlaps no anchor contribute nothing at all. Deterministic under
// identical seed, dataset and options.
FitResult fit(const Model& init, const std::vector<TrainingTriplet>& dataset,
              const FitOptions& opt);

// Sorted unique tokens of the given sentences.
Vocabulary build_vocabulary(const std::vector<std::string>& sentences,
                            int oov_buckets = 64);

struct TripletSetOptions {
  int per_scenario = 40;
  double no_query_fraction = 0.25;  // examples stripped of their sentence
  double jitter_fraction = 0.25;    // search-center offset, of context side
  int max_gap = 20;                 // frames between template and search
  std::uint64_t seed = 0;
};

// Renders each scenario and cuts template / search crop pairs around the
// target, skipping fully occluded frames.
std::vector<TrainingTriplet> make_training_set(
    const std::vector<ScenarioSpec>& scenarios, const ModelConfig& cfg,
    const TripletSetOptions& opt);

// Directory layout: manifest.json plus one PPM per crop. Absent queries are
// omitted from the manifest rather than stored as empty strings.
void save_triplets(const std::vector<TrainingTriplet>& triplets,
                   const std::string& dir);
std::vector<TrainingTriplet> load_triplets(const std::string& manifest_path);

}  // namespace nltrack
