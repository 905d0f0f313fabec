#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nltrack/backends.hpp"
#include "nltrack/flow.hpp"
#include "nltrack/image.hpp"
#include "nltrack/memory.hpp"
#include "nltrack/rpn.hpp"

namespace nltrack {

// Behaviour switches for one tracking run. Crop sizes, anchors and strides
// live in ModelConfig; this covers the loop wrapped around the model.
struct TrackerConfig {
  StateThresholds thresholds;
  MemoryParams memory;
  bool use_window = true;            // spatial prior in the settled states
  double window_sigma_factor = 0.2;  // sigma = factor * min(grid dims)
  bool use_mmm = true;               // weight updates, periodic maintenance
  bool use_nl = true;                // language branch and language resets
  bool nl_during_lost = false;       // language answers while lost, not only
                                     // after loss is confirmed
  bool use_flow = true;              // block-matching guidance vs zero motion
  int flow_block = 16;
  int flow_range = 16;
  int reset_period = 10;  // frames between re-searches while continued-lost
  std::vector<double> init_scale_factors = {0.5, 1.0, 2.0};
  std::vector<double> reset_scale_factors = {0.5, 1.0, 2.0};
  double init_score_floor = 0.05;
  void validate() const;
};

enum class Branch { kInit, kVisual, kNl };
const char* to_string(Branch b);

// One emitted detection per frame, in frame coordinates. `state` is the
// state after the frame's transition; `score` belongs to the emitted box.
struct FrameRecord {
  std::int64_t frame_idx = 0;
  BBox box;
  double score = 0.0;
  TrackState state = TrackState::kStable;
  Branch branch = Branch::kVisual;
  bool nl_fallback = false;  // language wanted but no kernel present
};

// Single-target tracking loop: flow-guided sampling, state-conditioned
// branch choice, exemplar memory upkeep and language-driven re-search.
// One session tracks one sequence; sessions are independent.
class TrackerSession {
 public:
  // Seeds memory from a known box on the first frame; the language kernel
  // is built when a query is given, otherwise the language branch stays
  // disabled. The box must lie inside the frame.
  static TrackerSession init_with_box(
      Model model, TrackerConfig cfg, const Image& frame, const BBox& b1,
      const std::string& query = "",
      std::shared_ptr<const FlowProvider> flow = nullptr);

  // Finds the target with the language kernel alone by scanning windows at
  // init_scale_factors times the area hint (frame area / 16 when the hint
  // is not positive), stride half the window side. Scanning order is
  // scale-major then row-major, and the first strict maximum wins, so the
  // result is deterministic. Fails when every window scores below
  // init_score_floor.
  static TrackerSession init_with_nl(
      Model model, TrackerConfig cfg, const Image& frame,
      const std::string& query, double target_area_hint = 0.0,
      std::shared_ptr<const FlowProvider> flow = nullptr);

  // Advances one frame: sample, detect with the state-appropriate branch,
  // update history, state, weights and memory, then re-search if loss has
  // been confirmed. Returns the frame's emitted detection.
  FrameRecord step(const Image& frame);

  // Synthetic record for the initialization frame.
  FrameRecord init_record() const;

  // Search crop for the given frame, centered on the last box shifted by
  // the mean flow inside it; the center is clamped into the frame.
  CropResult sample_search_patch(const Image& frame) const;

  // Full-frame language re-search at scales derived from the memory's
  // source boxes. Pure query: session state is untouched. Returns the best
  // detection in frame coordinates, or nothing when no language kernel
  // exists.
  std::optional<Detection> nl_reset(const Image& frame) const;

  const Memory& memory() const { return memory_; }
  TrackState state() const { return state_; }
  const BBox& last_box() const { return last_box_; }
  const ScoreHistory& history() const { return history_; }
  std::int64_t frame_index() const { return t_; }
  const Model& model() const { return model_; }
  bool has_nl_kernel() const { return kernel_.has_value(); }

 private:
  TrackerSession(Model model, TrackerConfig cfg,
                 std::shared_ptr<const FlowProvider> flow);

  struct BranchResult {
    Detection det;               // grid coordinates of the branch output
    double score = 0.0;          // unwindowed winner probability
    std::int64_t best_id = 0;    // matched exemplar, 0 for the language path
    Branch branch = Branch::kVisual;
    bool fallback = false;
  };

  BranchResult detect(const FeatureMap& search_feat, bool windowed) const;
  Detection visual_detect(const FeatureMap& search_feat, bool windowed,
                          std::int64_t* best_id) const;
  BBox grid_to_frame(const BBox& grid_box, int kernel_cells,
                     const CropTransform& tf) const;
  void seed_memory(const Image& frame, const BBox& box);
  Exemplar make_exemplar(const Image& frame, const BBox& box,
                         std::int64_t id, std::int64_t born_at) const;
  std::optional<Detection> window_sweep(const Image& frame,
                                        const std::vector<double>& sides,
                                        bool language,
                                        std::optional<BBox> around) const;
  std::vector<double> reset_sides() const;

  Model model_;
  TrackerConfig cfg_;
  std::shared_ptr<const FlowProvider> flow_;
  ToyFeatureExtractor extractor_;
  std::optional<NLKernel> kernel_;
  Memory memory_;
  ScoreHistory history_;
  TrackState state_ = TrackState::kStable;
  BBox last_box_;
  BBox init_box_;
  Image prev_frame_;
  std::int64_t t_ = 0;
  std::int64_t next_exemplar_id_ = 1;
  std::int64_t cl_streak_ = 0;  // frames spent in continued-lost so far
};

// Runs a whole sequence: the first frame initializes (already done by the
// caller), the rest are stepped. Prepends the initialization record.
std::vector<FrameRecord> track_frames(TrackerSession& session,
                                      const std::vector<Image>& frames);

}  // namespace nltrack
