#include "nltrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "nltrack/common.hpp"

namespace nltrack {

namespace {

double clamp(double v, double lo, double hi) {
  return std::max(lo, std::min(hi, v));
}

// Window centers tiling [0, extent] at half-window stride. A window larger
// than the extent degenerates to the single centered placement.
std::vector<double> tile_centers(double extent, double side) {
  std::vector<double> out;
  if (side >= extent) {
    out.push_back(0.5 * extent);
    return out;
  }
  const double lo = 0.5 * side;
  const double hi = extent - 0.5 * side;
  for (double c = lo; c <= hi + 1e-9; c += 0.5 * side) out.push_back(c);
  if (out.back() < hi - 1e-9) out.push_back(hi);
  return out;
}

}  // namespace

void TrackerConfig::validate() const {
  StateThresholds::checked(thresholds.tau2, thresholds.tau3);
  memory.validate();
  require(window_sigma_factor > 0.0,
          "TrackerConfig: window_sigma_factor must be positive");
  require(reset_period >= 1, "TrackerConfig: reset_period must be >= 1");
  require(flow_block >= 1 && flow_range >= 1,
          "TrackerConfig: flow block and range must be >= 1");
  require(!init_scale_factors.empty() && !reset_scale_factors.empty(),
          "TrackerConfig: scale factor lists must be non-empty");
  for (double f : init_scale_factors)
    require(f > 0.0, "TrackerConfig: init scale factors must be positive");
  for (double f : reset_scale_factors)
    require(f > 0.0, "TrackerConfig: reset scale factors must be positive");
  require(init_score_floor >= 0.0 && init_score_floor < 1.0,
          "TrackerConfig: init_score_floor must be in [0, 1)");
}

const char* to_string(Branch b) {
  switch (b) {
    case Branch::kInit: return "init";
    case Branch::kVisual: return "visual";
    case Branch::kNl: return "nl";
  }
  return "?";
}

TrackerSession::TrackerSession(Model model, TrackerConfig cfg,
                               std::shared_ptr<const FlowProvider> flow)
    : model_(std::move(model)),
      cfg_(std::move(cfg)),
      flow_(std::move(flow)),
      extractor_(model_.cfg.stride),
      history_(std::max(64, cfg_.memory.admission_window)) {
  cfg_.validate();
  model_.cfg.validate();
  if (!flow_) {
    if (cfg_.use_flow)
      flow_ = std::make_shared<BlockMatchingFlow>(cfg_.flow_block,
                                                  cfg_.flow_range);
    else
      flow_ = std::make_shared<ZeroFlow>();
  }
}

Exemplar TrackerSession::make_exemplar(const Image& frame, const BBox& box,
                                       std::int64_t id,
                                       std::int64_t born_at) const {
  const CropResult cr = crop_resize(frame, box.cx, box.cy, context_side(box),
                                    model_.cfg.exemplar_px);
  Exemplar ex;
  ex.id = id;
  ex.born_at = born_at;
  ex.weight = 1.0;
  ex.source_box = box;
  ex.features = extractor_.extract(cr.patch);
  return ex;
}

void TrackerSession::seed_memory(const Image& frame, const BBox& box) {
  memory_.items.clear();
  memory_.items.push_back(make_exemplar(frame, box, next_exemplar_id_, 0));
  ++next_exemplar_id_;
  last_box_ = box;
  init_box_ = box;
  state_ = TrackState::kStable;
  prev_frame_ = frame;
  t_ = 0;
}

TrackerSession TrackerSession::init_with_box(
    Model model, TrackerConfig cfg, const Image& frame, const BBox& b1,
    const std::string& query, std::shared_ptr<const FlowProvider> flow) {
  require(b1.w > 0.0 && b1.h > 0.0 && b1.x1() >= 0.0 && b1.y1() >= 0.0 &&
              b1.x2() <= frame.width && b1.y2() <= frame.height,
          "init_with_box: box outside the frame");
  TrackerSession s(std::move(model), std::move(cfg), std::move(flow));
  if (!query.empty() && s.cfg_.use_nl)
    s.kernel_ = build_nl_kernel(embed_sentence(query, s.model_.vocab),
                                s.model_.nl);
  s.seed_memory(frame, b1);
  return s;
}

TrackerSession TrackerSession::init_with_nl(
    Model model, TrackerConfig cfg, const Image& frame,
    const std::string& query, double target_area_hint,
    std::shared_ptr<const FlowProvider> flow) {
  require(!query.empty(), "init_with_nl: empty query");
  TrackerSession s(std::move(model), std::move(cfg), std::move(flow));
  s.kernel_ = build_nl_kernel(embed_sentence(query, s.model_.vocab),
                              s.model_.nl);
  const double hint = target_area_hint > 0.0
                          ? target_area_hint
                          : frame.width * frame.height / 16.0;
  const double base = std::sqrt(hint);
  std::vector<double> sides;
  for (double f : s.cfg_.init_scale_factors) sides.push_back(f * base);
  const std::optional<Detection> det =
      s.window_sweep(frame, sides, true, std::nullopt);
  require(det.has_value() && det->score >= s.cfg_.init_score_floor,
          "init_with_nl: no window matched the query");
  s.seed_memory(frame, det->box);
  return s;
}

FrameRecord TrackerSession::init_record() const {
  FrameRecord rec;
  rec.frame_idx = 0;
  rec.box = init_box_;
  rec.score = 1.0;
  rec.state = TrackState::kStable;
  rec.branch = Branch::kInit;
  return rec;
}

CropResult TrackerSession::sample_search_patch(const Image& frame) const {
  const FlowVec v = flow_->mean_flow(prev_frame_, frame, last_box_);
  const double cx = clamp(last_box_.cx + v.vx, 0.0, frame.width);
  const double cy = clamp(last_box_.cy + v.vy, 0.0, frame.height);
  const double side = context_side(last_box_) * model_.cfg.search_px /
                      model_.cfg.exemplar_px;
  return crop_resize(frame, cx, cy, side, model_.cfg.search_px);
}

BBox TrackerSession::grid_to_frame(const BBox& grid_box, int kernel_cells,
                                   const CropTransform& tf) const {
  const double off = corr_offset_px(kernel_cells, model_.cfg.stride);
  return tf.crop_to_frame(
      BBox{grid_box.cx + off, grid_box.cy + off, grid_box.w, grid_box.h});
}

Detection TrackerSession::visual_detect(const FeatureMap& search_feat,
                                        bool windowed,
                                        std::int64_t* best_id) const {
  std::vector<BranchOutput> outs;
  outs.reserve(memory_.items.size());
  std::vector<ScoredExemplar> scored;
  scored.reserve(memory_.items.size());
  for (const Exemplar& ex : memory_.items) {
    outs.push_back(siam_rpn_forward(search_feat, ex.features, model_.visual,
                                    model_.cfg.exemplar_kernel_cells));
    scored.push_back(ScoredExemplar{ex.id, ex.born_at, &outs.back().cls});
  }
  const std::int64_t id = select_best_exemplar(scored);
  std::size_t idx = 0;
  while (memory_.items[idx].id != id) ++idx;
  std::optional<WindowSpec> win;
  if (windowed) {
    const FeatureMap& m = outs[idx].cls.m;
    win = WindowSpec{0.5 * (m.width - 1), 0.5 * (m.height - 1),
                     cfg_.window_sigma_factor * std::min(m.width, m.height)};
  }
  if (best_id) *best_id = id;
  return extract_detection(outs[idx].cls, outs[idx].reg,
                           visual_grid(model_.cfg), win);
}

TrackerSession::BranchResult TrackerSession::detect(
    const FeatureMap& search_feat, bool windowed) const {
  const bool want_nl =
      cfg_.use_nl && (state_ == TrackState::kContinuedLost ||
                      (cfg_.nl_during_lost && state_ == TrackState::kLost));
  BranchResult r;
  if (want_nl && kernel_) {
    const BranchOutput out = nl_rpn_forward(search_feat, *kernel_, model_.nl);
    r.det = extract_detection(out.cls, out.reg, nl_grid(model_.cfg),
                              std::nullopt);
    r.branch = Branch::kNl;
  } else {
    r.det = visual_detect(search_feat, windowed, &r.best_id);
    r.branch = Branch::kVisual;
    r.fallback = want_nl && !kernel_;
  }
  r.score = r.det.score;
  return r;
}

std::vector<double> TrackerSession::reset_sides() const {
  // One side per distinct exemplar size, each at the configured multiples;
  // rounding collapses near-duplicates so sweeps stay bounded.
  std::set<long> seen;
  std::vector<double> sides;
  for (const Exemplar& ex : memory_.items) {
    const double base = std::sqrt(ex.source_box.w * ex.source_box.h);
    for (double f : cfg_.reset_scale_factors) {
      const long key = std::lround(f * base);
      if (key >= 1 && seen.insert(key).second)
        sides.push_back(static_cast<double>(key));
    }
  }
  std::sort(sides.begin(), sides.end());
  return sides;
}

std::optional<Detection> TrackerSession::window_sweep(
    const Image& frame, const std::vector<double>& sides, bool language,
    std::optional<BBox> around) const {
  std::optional<Detection> best;
  for (double side : sides) {
    if (side <= 0.0) continue;
    std::vector<double> xs, ys;
    if (around) {
      xs.push_back(clamp(around->cx, 0.0, frame.width));
      ys.push_back(clamp(around->cy, 0.0, frame.height));
    } else {
      xs = tile_centers(frame.width, side);
      ys = tile_centers(frame.height, side);
    }
    for (double cy : ys) {
      for (double cx : xs) {
        const BBox hyp{cx, cy, side, side};
        const double crop_side = context_side(hyp) * model_.cfg.search_px /
                                 model_.cfg.exemplar_px;
        const CropResult cr =
            crop_resize(frame, cx, cy, crop_side, model_.cfg.search_px);
        const FeatureMap feat = extractor_.extract(cr.patch);
        Detection d;
        int kcells = 0;
        if (language) {
          const BranchOutput out =
              nl_rpn_forward(feat, *kernel_, model_.nl);
          d = extract_detection(out.cls, out.reg, nl_grid(model_.cfg),
                                std::nullopt);
          kcells = model_.cfg.nl_kernel_cells;
        } else {
          d = visual_detect(feat, false, nullptr);
          kcells = model_.cfg.exemplar_kernel_cells;
        }
        d.box = grid_to_frame(d.box, kcells, cr.transform);
        if (!best || d.score > best->score) best = d;
      }
    }
  }
  return best;
}

std::optional<Detection> TrackerSession::nl_reset(const Image& frame) const {
  if (!kernel_) return std::nullopt;
  return window_sweep(frame, reset_sides(), true, std::nullopt);
}

FrameRecord TrackerSession::step(const Image& frame) {
  ++t_;
  const CropResult patch = sample_search_patch(frame);
  const FeatureMap feat = extractor_.extract(patch.patch);
  const bool windowed = cfg_.use_window && (state_ == TrackState::kStable ||
                                            state_ == TrackState::kRestoring);
  const BranchResult br = detect(feat, windowed);
  const int kcells = br.branch == Branch::kNl
                         ? model_.cfg.nl_kernel_cells
                         : model_.cfg.exemplar_kernel_cells;
  const BBox branch_box = grid_to_frame(br.det.box, kcells, patch.transform);

  history_.record(t_, br.score);
  const TrackState prev_state = state_;
  state_ = step_state(state_, history_, cfg_.thresholds);

  if (cfg_.use_mmm && br.branch == Branch::kVisual)
    update_weights(memory_, br.best_id, cfg_.memory);
  if (cfg_.use_mmm && t_ % cfg_.memory.maintenance_period == 0) {
    const Exemplar cand =
        make_exemplar(frame, branch_box, next_exemplar_id_, t_);
    maintain_memory(memory_, cand, history_, state_, t_, cfg_.memory);
    if (!memory_.items.empty() && memory_.items.back().id == cand.id)
      ++next_exemplar_id_;
  }

  FrameRecord rec;
  rec.frame_idx = t_;
  rec.box = branch_box;
  rec.score = br.score;
  rec.branch = br.branch;
  rec.nl_fallback = br.fallback;
  last_box_ = branch_box;

  // Once loss is confirmed, re-search on entry and then periodically. The
  // frame keeps whichever detection scored higher; the history entry for
  // this frame is amended to match, so every frame stays a single entry.
  if (state_ == TrackState::kContinuedLost) {
    const bool entered = prev_state != TrackState::kContinuedLost;
    cl_streak_ = entered ? 0 : cl_streak_ + 1;
    if (entered || cl_streak_ % cfg_.reset_period == 0) {
      std::optional<Detection> det;
      Branch reset_branch = Branch::kNl;
      if (cfg_.use_nl && kernel_) {
        det = nl_reset(frame);
      } else {
        // No language available: re-examine the current location at the
        // memory's scales instead of sweeping the whole frame.
        det = window_sweep(frame, reset_sides(), false, last_box_);
        reset_branch = Branch::kVisual;
      }
      if (det && det->score > br.score) {
        rec.box = det->box;
        rec.score = det->score;
        rec.branch = reset_branch;
        history_.amend_last(det->score);
        last_box_ = det->box;
      }
    }
  } else {
    cl_streak_ = 0;
  }

  rec.state = state_;
  prev_frame_ = frame;
  return rec;
}

std::vector<FrameRecord> track_frames(TrackerSession& session,
                                      const std::vector<Image>& frames) {
  require(!frames.empty(), "track_frames: empty sequence");
  require(session.frame_index() == 0,
          "track_frames: session already advanced");
  std::vector<FrameRecord> out;
  out.reserve(frames.size());
  out.push_back(session.init_record());
  for (std::size_t i = 1; i < frames.size(); ++i)
    out.push_back(session.step(frames[i]));
  return out;
}

}  // namespace nltrack
