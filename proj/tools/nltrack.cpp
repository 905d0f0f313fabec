// Command line front end: synthesize sequences, train models, run the
// tracker, and score predictions. Exit codes: 0 success, 2 bad input or
// validation failure, 3 missing required modality, 4 runtime failure.
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nltrack/backends.hpp"
#include "nltrack/config.hpp"
#include "nltrack/eval.hpp"
#include "nltrack/image.hpp"
#include "nltrack/synth.hpp"
#include "nltrack/tracker.hpp"
#include "nltrack/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nltrack;

namespace {

// A required input channel (query, first-frame box) that the sequence does
// not provide; distinct from malformed input.
struct MissingModality : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int log_level() {
  const char* v = std::getenv("NLTRACK_LOG");
  if (!v) return 0;
  const std::string s(v);
  if (s == "debug") return 2;
  if (s == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "nltrack: %s\n", msg.c_str());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good())
    throw std::invalid_argument("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f.good())
    throw std::runtime_error("cannot write " + path);
  f << text;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions surface
// after all workers finish; the first one wins.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const int workers = std::min(jobs, n);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const std::vector<std::string>& spec_files, bool suite,
              const std::string& out, bool flow) {
  std::vector<ScenarioSpec> specs;
  if (suite)
    for (const ScenarioSpec& s : standard_suite()) specs.push_back(s);
  for (const std::string& path : spec_files)
    specs.push_back(scenario_from_json_text(read_file(path)));
  if (specs.empty())
    throw std::invalid_argument("synth: nothing to do; pass --suite or spec "
                                "files");
  WriteOptions wo;
  wo.flow_files = flow;
  for (const ScenarioSpec& s : specs) {
    const std::string dir = (fs::path(out) / s.name).string();
    write_sequence(s, dir, wo);
    std::printf("%s\n", dir.c_str());
    log_info("rendered " + s.name + " (" + std::to_string(s.length) +
             " frames)");
  }
  return 0;
}

// ---- train ----------------------------------------------------------------

void check_manifest_keys(const json& j) {
  static const std::vector<std::string> allowed = {
      "sequences",      "per_scenario", "no_query_fraction",
      "jitter_fraction", "max_gap",     "triplet_seed",
      "model_seed",     "epochs",       "learning_rate",
      "batch_size",     "fit_seed",     "square_anchors_only"};
  if (!j.is_object())
    throw std::invalid_argument("manifest: top level must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument("manifest: unknown key '" + key + "'");
  }
}

int cmd_train(const std::string& manifest_path, const std::string& out) {
  json man;
  try {
    man = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("manifest: invalid JSON: " +
                                std::string(e.what()));
  }
  check_manifest_keys(man);
  if (!man.contains("sequences") || man["sequences"].empty())
    throw std::invalid_argument("manifest: 'sequences' must list at least "
                                "one sequence directory");

  std::vector<ScenarioSpec> specs;
  for (const auto& dir : man["sequences"]) {
    const std::string meta =
        (fs::path(dir.get<std::string>()) / "scenario.json").string();
    specs.push_back(scenario_from_json_text(read_file(meta)));
  }

  ModelConfig cfg;
  if (man.value("square_anchors_only", true)) cfg.anchor_ratios = {1.0};

  TripletSetOptions topt;
  topt.per_scenario = man.value("per_scenario", 16);
  topt.no_query_fraction = man.value("no_query_fraction", 0.25);
  topt.jitter_fraction = man.value("jitter_fraction", 0.25);
  topt.max_gap = man.value("max_gap", 20);
  topt.seed = man.value("triplet_seed", std::uint64_t{11});
  const auto set = make_training_set(specs, cfg, topt);

  std::vector<std::string> sentences;
  for (const auto& t : set)
    if (!t.query.empty()) sentences.push_back(t.query);
  for (const auto& s : specs) sentences.push_back(nl_description(s));
  const Model init = make_model(cfg, build_vocabulary(sentences),
                                man.value("model_seed", std::uint64_t{41}));

  FitOptions fopt;
  fopt.epochs = man.value("epochs", 120);
  fopt.learning_rate = man.value("learning_rate", 0.05);
  fopt.batch_size = man.value("batch_size", 16);
  fopt.seed = man.value("fit_seed", std::uint64_t{13});

  log_info("training on " + std::to_string(set.size()) + " triplets for " +
           std::to_string(fopt.epochs) + " epochs");
  const FitResult res = fit(init, set, fopt);
  if (res.diverged)
    throw std::runtime_error("training diverged; lower the learning rate");

  fs::create_directories(out);
  save_model(res.model, (fs::path(out) / "model").string());
  {
    std::ofstream log(fs::path(out) / "loss_log.csv");
    log << "epoch,loss\n";
    char line[64];
    for (std::size_t i = 0; i < res.epoch_losses.size(); ++i) {
      std::snprintf(line, sizeof(line), "%zu,%.12g\n", i,
                    res.epoch_losses[i]);
      log << line;
    }
  }
  json echo = man;
  echo["triplets"] = set.size();
  echo["final_loss"] = res.epoch_losses.back();
  write_file((fs::path(out) / "train_run.json").string(), echo.dump(2) + "\n");
  std::printf("%s\n", (fs::path(out) / "model").string().c_str());
  return 0;
}

// ---- track ----------------------------------------------------------------

void track_one(const Model& model, const RunConfig& cfg,
               const std::string& seq_dir) {
  const IngestResult in = ingest_sequence(seq_dir);
  std::vector<Image> frames;
  frames.reserve(in.frame_files.size());
  for (const std::string& f : in.frame_files) frames.push_back(load_ppm(f));

  const TrackerConfig tcfg = cfg.materialize_tracker();
  std::optional<TrackerSession> session;
  if (cfg.mode == "nl-only") {
    if (in.ann.query.empty())
      throw MissingModality("nl-only mode needs nlp.txt in " + seq_dir);
    session = TrackerSession::init_with_nl(model, tcfg, frames[0],
                                           in.ann.query);
  } else {
    if (!in.ann.present[0])
      throw MissingModality("no first-frame box in " + seq_dir);
    const std::string query =
        cfg.mode == "box-only" ? std::string() : in.ann.query;
    session = TrackerSession::init_with_box(model, tcfg, frames[0],
                                            in.ann.boxes[0], query);
  }
  const std::vector<FrameRecord> records = track_frames(*session, frames);

  fs::create_directories(cfg.out_dir);
  const std::string name = in.ann.name;
  write_predictions(records,
                    (fs::path(cfg.out_dir) / (name + ".csv")).string());
  json meta;
  meta["sequence"] = seq_dir;
  meta["frames"] = records.size();
  meta["seed"] = cfg.seed;
  meta["mode"] = cfg.mode;
  meta["model"] = cfg.model_dir;
  write_file((fs::path(cfg.out_dir) / (name + ".run.json")).string(),
             meta.dump(2) + "\n");
  log_info("tracked " + name + " (" + std::to_string(records.size()) +
           " frames)");
}

int cmd_track(RunConfig cfg, bool print_config) {
  if (print_config) {
    std::printf("%s\n", run_config_to_json(cfg).c_str());
    return 0;
  }
  cfg.validate();
  if (cfg.model_dir.empty())
    throw std::invalid_argument("track: no model; set --model or the "
                                "config's 'model'");
  if (cfg.sequence_dirs.empty())
    throw std::invalid_argument("track: no sequences given");
  if (cfg.out_dir.empty())
    throw std::invalid_argument("track: no output directory; set --out");
  const Model model = load_model(cfg.model_dir);
  parallel_for(static_cast<int>(cfg.sequence_dirs.size()), cfg.jobs,
               [&](int i) { track_one(model, cfg, cfg.sequence_dirs[i]); });
  return 0;
}

// ---- eval -----------------------------------------------------------------

std::vector<BBox> prediction_boxes(const std::string& csv_path,
                                   std::size_t expected_frames) {
  const std::vector<PredictionRow> rows = read_predictions(csv_path);
  if (rows.size() != expected_frames)
    throw std::invalid_argument(
        csv_path + ": " + std::to_string(rows.size()) +
        " prediction rows for " + std::to_string(expected_frames) +
        " frames");
  std::vector<BBox> boxes;
  boxes.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].frame_idx != static_cast<std::int64_t>(i))
      throw std::invalid_argument(csv_path + ": line " +
                                  std::to_string(i + 2) +
                                  ": unexpected frame index");
    boxes.push_back(rows[i].box);
  }
  return boxes;
}

void write_report(const MetricReport& r, const std::string& out) {
  write_file((fs::path(out) / (r.name + ".report.json")).string(),
             metric_report_to_json(r) + "\n");
  write_curve_csv(r.success,
                  (fs::path(out) / (r.name + ".success.csv")).string());
  write_curve_csv(r.precision,
                  (fs::path(out) / (r.name + ".precision.csv")).string());
  write_curve_csv(
      r.norm_precision,
      (fs::path(out) / (r.name + ".norm_precision.csv")).string());
}

int cmd_eval(const std::string& preds, std::vector<std::string> seq_dirs,
             const std::string& out, int jobs) {
  if (seq_dirs.empty())
    throw std::invalid_argument("eval: no sequences given");
  const bool preds_is_dir = fs::is_directory(preds);
  if (!preds_is_dir && seq_dirs.size() > 1)
    throw std::invalid_argument("eval: --preds must be a directory when "
                                "scoring several sequences");
  fs::create_directories(out);

  std::vector<MetricReport> reports(seq_dirs.size());
  parallel_for(
      static_cast<int>(seq_dirs.size()), jobs, [&](int i) {
        const IngestResult in = ingest_sequence(seq_dirs[i]);
        const std::string csv =
            preds_is_dir
                ? (fs::path(preds) / (in.ann.name + ".csv")).string()
                : preds;
        const std::vector<BBox> boxes =
            prediction_boxes(csv, in.ann.size());
        reports[i] = evaluate_sequence(in.ann.name, boxes, in.ann);
        log_info("scored " + in.ann.name);
      });
  for (const MetricReport& r : reports) write_report(r, out);
  if (reports.size() > 1) write_report(aggregate_reports(reports), out);
  std::printf("%s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"language-assisted object tracker"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "render synthetic sequences");
  std::vector<std::string> spec_files;
  bool suite = false;
  bool no_flow = false;
  std::string synth_out = ".";
  synth->add_option("specs", spec_files, "scenario JSON files");
  synth->add_flag("--suite", suite, "render the standard scenario suite");
  synth->add_flag("--no-flow", no_flow, "skip displacement files");
  synth->add_option("--out", synth_out, "output root directory");

  // train
  auto* train = app.add_subcommand("train", "fit a model from a manifest");
  std::string manifest_path;
  std::string train_out;
  train->add_option("--manifest", manifest_path, "training manifest JSON")
      ->required();
  train->add_option("--out", train_out, "output bundle directory")
      ->required();

  // track
  auto* track = app.add_subcommand("track", "run the tracker");
  std::string config_path, model_dir, mode, track_out;
  std::vector<std::string> track_seqs;
  std::uint64_t seed = 0;
  int jobs = 0;
  bool print_config = false;
  track->add_option("--config", config_path, "run config JSON");
  track->add_option("--sequence", track_seqs, "sequence directories");
  track->add_option("--model", model_dir, "model bundle directory");
  track->add_option("--mode", mode, "nl-only | box-only | box+nl");
  track->add_option("--out", track_out, "predictions directory");
  track->add_option("--seed", seed, "seed echoed into run metadata");
  track->add_option("--jobs", jobs, "parallel sequences");
  track->add_flag("--print-config", print_config,
                  "dump the effective config and exit");

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions");
  std::string preds, eval_out = ".";
  std::vector<std::string> eval_seqs;
  int eval_jobs = 1;
  eval->add_option("--preds", preds,
                   "predictions CSV, or a directory of <name>.csv")
      ->required();
  eval->add_option("--sequence", eval_seqs, "sequence directories");
  eval->add_option("--out", eval_out, "report directory");
  eval->add_option("--jobs", eval_jobs, "parallel sequences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(spec_files, suite, synth_out, !no_flow);
    if (train->parsed()) return cmd_train(manifest_path, train_out);
    if (track->parsed()) {
      RunConfig cfg;
      if (!config_path.empty())
        cfg = run_config_from_json_text(read_file(config_path));
      if (!model_dir.empty()) cfg.model_dir = model_dir;
      if (!mode.empty()) cfg.mode = mode;
      if (!track_out.empty()) cfg.out_dir = track_out;
      if (seed != 0) cfg.seed = seed;
      if (jobs != 0) cfg.jobs = jobs;
      for (const std::string& s : track_seqs) cfg.sequence_dirs.push_back(s);
      return cmd_track(std::move(cfg), print_config);
    }
    if (eval->parsed()) return cmd_eval(preds, eval_seqs, eval_out,
                                        eval_jobs);
  } catch (const MissingModality& e) {
    std::fprintf(stderr, "nltrack: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "nltrack: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "nltrack: %s\n", e.what());
    return 4;
  }
  return 0;
}
