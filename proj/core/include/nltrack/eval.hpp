#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/tracker.hpp"

namespace nltrack {

// Ground truth for one sequence. boxes[i] is meaningful only when
// present[i]; an all-zero annotation line marks the target absent.
struct SequenceAnnotation {
  std::string name;
  std::vector<BBox> boxes;
  std::vector<bool> present;
  std::vector<bool> occluded;
  std::string query;

  std::size_t size() const { return boxes.size(); }
  void validate() const;
};

struct Curve {
  std::vector<double> thresholds;
  std::vector<double> values;
  double auc = 0.0;
};

// Recovery behaviour around occlusions and tracking losses. The raw
// per-event values are kept so multi-sequence aggregation can pool events
// instead of averaging per-sequence means.
struct RecoveryStats {
  std::vector<double> window_ious;       // per-frame, 100 frames per event
  std::vector<double> recover_frames;    // per occlusion event, censored
  std::vector<double> reacquire_frames;  // per loss event, censored
  int occlusion_events = 0;
  int loss_events = 0;

  std::optional<double> mean_iou_after_occlusion() const;
  std::optional<double> mean_frames_to_recover() const;
  std::optional<double> mean_frames_to_reacquire() const;
};

struct MetricReport {
  std::string name;
  int evaluated_frames = 0;  // frames with a present ground-truth box
  Curve success;             // IoU threshold 0..1, step 0.01
  Curve precision;           // center error 0..50 px, step 1
  Curve norm_precision;      // per-axis normalized error 0..0.5, step 0.01
  RecoveryStats recovery;
};

// success(t) = fraction of present-GT frames with IoU strictly above t.
// AUC is the mean over the threshold grid. Absent-GT frames never enter
// the denominator.
Curve success_curve(const std::vector<BBox>& preds,
                    const SequenceAnnotation& ann);

// precision(t) = fraction of present-GT frames whose center error is <= t.
// The normalized variant divides the error per axis by the GT box size
// before taking the norm.
Curve precision_curve(const std::vector<BBox>& preds,
                      const SequenceAnnotation& ann);
Curve normalized_precision_curve(const std::vector<BBox>& preds,
                                 const SequenceAnnotation& ann);

// Occlusion events are delimited by the occlusion flag's falling edge.
// Per event: up to 100 following frames' IoUs, and the number of frames
// scanned until the first IoU > 0 (the remaining length when it never
// happens). Loss events start where IoU hits zero on a visible frame and
// count frames until the first IoU > 0 again.
RecoveryStats recovery_stats(const std::vector<BBox>& preds,
                             const SequenceAnnotation& ann);

MetricReport evaluate_sequence(const std::string& name,
                               const std::vector<BBox>& preds,
                               const SequenceAnnotation& ann);

// Unweighted mean of the per-sequence curves; recovery events pooled.
// Reports are processed in name order so the result is input-order
// independent.
MetricReport aggregate_reports(std::vector<MetricReport> reports);

std::string metric_report_to_json(const MetricReport& report);
void write_curve_csv(const Curve& curve, const std::string& path);

// One row of a predictions file. States and branches stay strings here;
// the file is the interface.
struct PredictionRow {
  std::int64_t frame_idx = 0;
  BBox box;
  double score = 0.0;
  std::string state;
  std::string branch;
};

void write_predictions(const std::vector<FrameRecord>& records,
                       const std::string& path);
// Rejects bad headers and malformed rows with the offending line number.
std::vector<PredictionRow> read_predictions(const std::string& path);

struct IngestResult {
  std::vector<std::string> frame_files;  // sorted, one per annotated frame
  SequenceAnnotation ann;
};

// Reads a sequence directory: img/ frames plus groundtruth_rect.txt, and
// full_occlusion.txt / nlp.txt when present. Malformed lines are reported
// with their line number; a frame/annotation count mismatch is an error.
IngestResult ingest_sequence(const std::string& dir);

// Writes the annotation back out in the same file formats. Values print
// with enough precision to survive an ingest round trip.
void write_annotation(const SequenceAnnotation& ann, const std::string& dir);

}  // namespace nltrack
