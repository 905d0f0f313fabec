#include "nltrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nltrack/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nltrack {

namespace {

constexpr int kOcclusionWindow = 100;

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double t = lo + i * step;
    if (t > hi + 1e-12) break;
    out.push_back(t);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

// Per-frame IoU against present GT; absent frames carry no value.
std::vector<std::optional<double>> frame_ious(
    const std::vector<BBox>& preds, const SequenceAnnotation& ann) {
  require(preds.size() == ann.size(),
          "evaluation: " + std::to_string(preds.size()) + " predictions vs " +
              std::to_string(ann.size()) + " annotated frames");
  ann.validate();
  std::vector<std::optional<double>> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (ann.present[i]) out[i] = iou(preds[i], ann.boxes[i]);
  return out;
}

Curve rate_curve(const std::vector<double>& thresholds,
                 const std::vector<double>& errors, bool keep_below) {
  Curve c;
  c.thresholds = thresholds;
  c.values.reserve(thresholds.size());
  for (double t : thresholds) {
    double hit = 0.0;
    for (double e : errors)
      if (keep_below ? e <= t : e > t) hit += 1.0;
    c.values.push_back(errors.empty() ? 0.0 : hit / errors.size());
  }
  c.auc = mean(c.values);
  return c;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": not a number: '" + s + "'");
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used])))
    ++used;
  require(used == s.size(), where + ": trailing junk in '" + s + "'");
  require(std::isfinite(v), where + ": non-finite value '" + s + "'");
  return v;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

json curve_json(const Curve& c) {
  json j;
  j["auc"] = c.auc;
  j["thresholds"] = c.thresholds;
  j["values"] = c.values;
  return j;
}

json optional_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

}  // namespace

void SequenceAnnotation::validate() const {
  require(!boxes.empty(), "annotation '" + name + "': no frames");
  require(present.size() == boxes.size() && occluded.size() == boxes.size(),
          "annotation '" + name + "': field lengths differ");
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (present[i])
      require(boxes[i].w > 0.0 && boxes[i].h > 0.0,
              "annotation '" + name + "': degenerate box at frame " +
                  std::to_string(i));
}

std::optional<double> RecoveryStats::mean_iou_after_occlusion() const {
  if (window_ious.empty()) return std::nullopt;
  return mean(window_ious);
}

std::optional<double> RecoveryStats::mean_frames_to_recover() const {
  if (recover_frames.empty()) return std::nullopt;
  return mean(recover_frames);
}

std::optional<double> RecoveryStats::mean_frames_to_reacquire() const {
  if (reacquire_frames.empty()) return std::nullopt;
  return mean(reacquire_frames);
}

Curve success_curve(const std::vector<BBox>& preds,
                    const SequenceAnnotation& ann) {
  const auto ious = frame_ious(preds, ann);
  std::vector<double> vals;
  for (const auto& v : ious)
    if (v) vals.push_back(*v);
  return rate_curve(grid(0.0, 1.0, 0.01), vals, /*keep_below=*/false);
}

Curve precision_curve(const std::vector<BBox>& preds,
                      const SequenceAnnotation& ann) {
  require(preds.size() == ann.size(), "precision: length mismatch");
  ann.validate();
  std::vector<double> errs;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (ann.present[i])
      errs.push_back(std::hypot(preds[i].cx - ann.boxes[i].cx,
                                preds[i].cy - ann.boxes[i].cy));
  return rate_curve(grid(0.0, 50.0, 1.0), errs, /*keep_below=*/true);
}

Curve normalized_precision_curve(const std::vector<BBox>& preds,
                                 const SequenceAnnotation& ann) {
  require(preds.size() == ann.size(), "normalized precision: length mismatch");
  ann.validate();
  std::vector<double> errs;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (ann.present[i])
      errs.push_back(std::hypot(
          (preds[i].cx - ann.boxes[i].cx) / ann.boxes[i].w,
          (preds[i].cy - ann.boxes[i].cy) / ann.boxes[i].h));
  return rate_curve(grid(0.0, 0.5, 0.01), errs, /*keep_below=*/true);
}

RecoveryStats recovery_stats(const std::vector<BBox>& preds,
                             const SequenceAnnotation& ann) {
  const auto ious = frame_ious(preds, ann);
  const std::size_t n = ious.size();
  RecoveryStats st;

  // Occlusion events begin where the flag falls.
  for (std::size_t e = 1; e < n; ++e) {
    if (!(ann.occluded[e - 1] && !ann.occluded[e])) continue;
    ++st.occlusion_events;
    const std::size_t stop = std::min(n, e + kOcclusionWindow);
    for (std::size_t j = e; j < stop; ++j)
      if (ious[j]) st.window_ious.push_back(*ious[j]);
    bool found = false;
    for (std::size_t j = e; j < n; ++j) {
      if (ious[j] && *ious[j] > 0.0) {
        st.recover_frames.push_back(static_cast<double>(j - e + 1));
        found = true;
        break;
      }
    }
    if (!found)
      st.recover_frames.push_back(static_cast<double>(n - e));
  }

  // Loss events begin where IoU hits zero on a visible frame; the next can
  // only start after the previous one resolves.
  std::optional<double> last_visible_iou;
  for (std::size_t i = 0; i < n; ++i) {
    const bool visible = ann.present[i] && !ann.occluded[i];
    if (!visible) continue;
    const double v = *ious[i];
    const bool onset =
        v == 0.0 && (!last_visible_iou || *last_visible_iou > 0.0);
    last_visible_iou = v;
    if (!onset) continue;
    ++st.loss_events;
    bool found = false;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (ious[j] && *ious[j] > 0.0) {
        st.reacquire_frames.push_back(static_cast<double>(j - i));
        // Resume after the recovery so overlapping events are not counted.
        i = j - 1;
        last_visible_iou.reset();
        found = true;
        break;
      }
    }
    if (!found) {
      st.reacquire_frames.push_back(static_cast<double>(n - 1 - i));
      break;
    }
  }
  return st;
}

MetricReport evaluate_sequence(const std::string& name,
                               const std::vector<BBox>& preds,
                               const SequenceAnnotation& ann) {
  MetricReport r;
  r.name = name;
  for (std::size_t i = 0; i < ann.present.size(); ++i)
    if (ann.present[i]) ++r.evaluated_frames;
  r.success = success_curve(preds, ann);
  r.precision = precision_curve(preds, ann);
  r.norm_precision = normalized_precision_curve(preds, ann);
  r.recovery = recovery_stats(preds, ann);
  return r;
}

MetricReport aggregate_reports(std::vector<MetricReport> reports) {
  require(!reports.empty(), "aggregate_reports: no reports");
  std::sort(reports.begin(), reports.end(),
            [](const MetricReport& a, const MetricReport& b) {
              return a.name < b.name;
            });
  MetricReport out;
  out.name = "aggregate";
  out.success.thresholds = reports.front().success.thresholds;
  out.precision.thresholds = reports.front().precision.thresholds;
  out.norm_precision.thresholds = reports.front().norm_precision.thresholds;
  out.success.values.assign(out.success.thresholds.size(), 0.0);
  out.precision.values.assign(out.precision.thresholds.size(), 0.0);
  out.norm_precision.values.assign(out.norm_precision.thresholds.size(), 0.0);
  for (const MetricReport& r : reports) {
    require(r.success.values.size() == out.success.values.size() &&
                r.precision.values.size() == out.precision.values.size() &&
                r.norm_precision.values.size() ==
                    out.norm_precision.values.size(),
            "aggregate_reports: mismatched curve grids");
    out.evaluated_frames += r.evaluated_frames;
    for (std::size_t i = 0; i < r.success.values.size(); ++i)
      out.success.values[i] += r.success.values[i];
    for (std::size_t i = 0; i < r.precision.values.size(); ++i)
      out.precision.values[i] += r.precision.values[i];
    for (std::size_t i = 0; i < r.norm_precision.values.size(); ++i)
      out.norm_precision.values[i] += r.norm_precision.values[i];
    auto& rec = out.recovery;
    rec.window_ious.insert(rec.window_ious.end(),
                           r.recovery.window_ious.begin(),
                           r.recovery.window_ious.end());
    rec.recover_frames.insert(rec.recover_frames.end(),
                              r.recovery.recover_frames.begin(),
                              r.recovery.recover_frames.end());
    rec.reacquire_frames.insert(rec.reacquire_frames.end(),
                                r.recovery.reacquire_frames.begin(),
                                r.recovery.reacquire_frames.end());
    rec.occlusion_events += r.recovery.occlusion_events;
    rec.loss_events += r.recovery.loss_events;
  }
  const double n = static_cast<double>(reports.size());
  for (double& v : out.success.values) v /= n;
  for (double& v : out.precision.values) v /= n;
  for (double& v : out.norm_precision.values) v /= n;
  out.success.auc = mean(out.success.values);
  out.precision.auc = mean(out.precision.values);
  out.norm_precision.auc = mean(out.norm_precision.values);
  return out;
}

std::string metric_report_to_json(const MetricReport& report) {
  json j;
  j["name"] = report.name;
  j["evaluated_frames"] = report.evaluated_frames;
  j["success"] = curve_json(report.success);
  j["precision"] = curve_json(report.precision);
  j["norm_precision"] = curve_json(report.norm_precision);
  json rec;
  rec["mean_iou_after_occlusion"] =
      optional_json(report.recovery.mean_iou_after_occlusion());
  rec["mean_frames_to_recover"] =
      optional_json(report.recovery.mean_frames_to_recover());
  rec["mean_frames_to_reacquire"] =
      optional_json(report.recovery.mean_frames_to_reacquire());
  rec["occlusion_events"] = report.recovery.occlusion_events;
  rec["loss_events"] = report.recovery.loss_events;
  j["recovery"] = rec;
  j["notes"] = json::array(
      {"occlusion windows include frames where the target is re-occluded"});
  return j.dump(2);
}

void write_curve_csv(const Curve& curve, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "write_curve_csv: cannot write " + path);
  f << "threshold,value\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    f << format_value(curve.thresholds[i]) << ','
      << format_value(curve.values[i]) << '\n';
}

void write_predictions(const std::vector<FrameRecord>& records,
                       const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "write_predictions: cannot write " + path);
  f << "frame_idx,x,y,w,h,score,state,branch\n";
  char line[256];
  for (const FrameRecord& r : records) {
    std::snprintf(line, sizeof(line),
                  "%lld,%.3f,%.3f,%.3f,%.3f,%.6f,%s,%s\n",
                  static_cast<long long>(r.frame_idx), r.box.x1(), r.box.y1(),
                  r.box.w, r.box.h, r.score, to_string(r.state),
                  to_string(r.branch));
    f << line;
  }
}

std::vector<PredictionRow> read_predictions(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "read_predictions: cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)),
          path + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "frame_idx,x,y,w,h,score,state,branch",
          path + ": line 1: unexpected header '" + line + "'");
  std::vector<PredictionRow> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ": line " + std::to_string(lineno);
    const auto fields = split_fields(line);
    require(fields.size() == 8,
            where + ": expected 8 fields, got " +
                std::to_string(fields.size()));
    PredictionRow row;
    row.frame_idx =
        static_cast<std::int64_t>(parse_number(fields[0], where));
    row.box = BBox::from_xywh(
        parse_number(fields[1], where), parse_number(fields[2], where),
        parse_number(fields[3], where), parse_number(fields[4], where));
    row.score = parse_number(fields[5], where);
    row.state = fields[6];
    row.branch = fields[7];
    require(!row.state.empty() && !row.branch.empty(),
            where + ": empty state or branch");
    out.push_back(row);
  }
  return out;
}

IngestResult ingest_sequence(const std::string& dir) {
  const fs::path root(dir);
  require(fs::is_directory(root), "ingest: no such directory: " + dir);
  const fs::path img = root / "img";
  require(fs::is_directory(img), "ingest: missing img/ under " + dir);

  IngestResult res;
  for (const auto& entry : fs::directory_iterator(img))
    if (entry.is_regular_file())
      res.frame_files.push_back(entry.path().string());
  std::sort(res.frame_files.begin(), res.frame_files.end());
  require(!res.frame_files.empty(), "ingest: no frames under " + img.string());

  res.ann.name = root.filename().string();
  const std::string gt_path = (root / "groundtruth_rect.txt").string();
  std::ifstream gt(gt_path);
  require(gt.good(), "ingest: missing " + gt_path);
  std::string line;
  int lineno = 0;
  while (std::getline(gt, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = gt_path + ": line " + std::to_string(lineno);
    const auto fields = split_fields(line);
    require(fields.size() == 4,
            where + ": expected 4 fields, got " +
                std::to_string(fields.size()));
    const double x = parse_number(fields[0], where);
    const double y = parse_number(fields[1], where);
    const double w = parse_number(fields[2], where);
    const double h = parse_number(fields[3], where);
    const bool absent = x == 0.0 && y == 0.0 && w == 0.0 && h == 0.0;
    require(absent || (w > 0.0 && h > 0.0),
            where + ": non-positive box size");
    res.ann.boxes.push_back(absent ? BBox{} : BBox::from_xywh(x, y, w, h));
    res.ann.present.push_back(!absent);
  }
  require(res.ann.boxes.size() == res.frame_files.size(),
          "ingest: " + std::to_string(res.ann.boxes.size()) +
              " annotation lines vs " +
              std::to_string(res.frame_files.size()) + " frames in " + dir);

  const std::string occ_path = (root / "full_occlusion.txt").string();
  if (std::ifstream occ(occ_path); occ.good()) {
    lineno = 0;
    while (std::getline(occ, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      const std::string where = occ_path + ": line " + std::to_string(lineno);
      const auto fields = split_fields(line);
      require(fields.size() == 1 && (fields[0] == "0" || fields[0] == "1"),
              where + ": expected 0 or 1");
      res.ann.occluded.push_back(fields[0] == "1");
    }
    require(res.ann.occluded.size() == res.ann.boxes.size(),
            "ingest: occlusion flag count differs from frame count in " +
                dir);
  } else {
    res.ann.occluded.assign(res.ann.boxes.size(), false);
  }

  if (std::ifstream nlp(root / "nlp.txt"); nlp.good()) {
    std::getline(nlp, res.ann.query);
    if (!res.ann.query.empty() && res.ann.query.back() == '\r')
      res.ann.query.pop_back();
  }

  res.ann.validate();
  return res;
}

void write_annotation(const SequenceAnnotation& ann, const std::string& dir) {
  ann.validate();
  fs::create_directories(dir);
  std::ofstream gt(fs::path(dir) / "groundtruth_rect.txt");
  require(gt.good(), "write_annotation: cannot write into " + dir);
  for (std::size_t i = 0; i < ann.boxes.size(); ++i) {
    if (!ann.present[i]) {
      gt << "0,0,0,0\n";
      continue;
    }
    const BBox& b = ann.boxes[i];
    gt << format_value(b.x1()) << ',' << format_value(b.y1()) << ','
       << format_value(b.w) << ',' << format_value(b.h) << '\n';
  }
  std::ofstream occ(fs::path(dir) / "full_occlusion.txt");
  for (std::size_t i = 0; i < ann.occluded.size(); ++i)
    occ << (ann.occluded[i] ? 1 : 0) << '\n';
  if (!ann.query.empty()) {
    std::ofstream nlp(fs::path(dir) / "nlp.txt");
    nlp << ann.query << '\n';
  }
}

}  // namespace nltrack
