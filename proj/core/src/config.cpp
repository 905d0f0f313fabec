#include "nltrack/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "nltrack/common.hpp"

using json = nlohmann::json;

namespace nltrack {

namespace {

const std::set<std::string> kModes = {"nl-only", "box-only", "box+nl"};

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
  require(j.is_object(), "config: " + where + " must be an object");
  for (const auto& [key, _] : j.items())
    require(allowed.count(key) != 0,
            "config: unknown key '" + where + key + "'");
}

template <typename T>
void read(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + where + key +
                                "'");
  }
}

void read_tracker(const json& j, TrackerConfig& t) {
  const std::string w = "tracker.";
  check_keys(j, w,
             {"tau2", "tau3", "window", "window_sigma_factor", "mmm",
              "nl_during_lost", "flow", "flow_block", "flow_range",
              "reset_period", "init_scale_factors", "reset_scale_factors",
              "init_score_floor", "memory"});
  read(j, w, "tau2", t.thresholds.tau2);
  read(j, w, "tau3", t.thresholds.tau3);
  read(j, w, "window", t.use_window);
  read(j, w, "window_sigma_factor", t.window_sigma_factor);
  read(j, w, "mmm", t.use_mmm);
  read(j, w, "nl_during_lost", t.nl_during_lost);
  read(j, w, "flow", t.use_flow);
  read(j, w, "flow_block", t.flow_block);
  read(j, w, "flow_range", t.flow_range);
  read(j, w, "reset_period", t.reset_period);
  read(j, w, "init_scale_factors", t.init_scale_factors);
  read(j, w, "reset_scale_factors", t.reset_scale_factors);
  read(j, w, "init_score_floor", t.init_score_floor);
  if (j.contains("memory")) {
    const json& m = j.at("memory");
    const std::string mw = "tracker.memory.";
    check_keys(m, mw,
               {"capacity", "weight_cap", "delta_best", "delta_other",
                "tau1", "maintenance_period", "admission_window",
                "normalize_features", "literal_weight_rule",
                "single_frame_admission"});
    read(m, mw, "capacity", t.memory.capacity);
    read(m, mw, "weight_cap", t.memory.weight_cap);
    read(m, mw, "delta_best", t.memory.delta_best);
    read(m, mw, "delta_other", t.memory.delta_other);
    read(m, mw, "tau1", t.memory.tau1);
    read(m, mw, "maintenance_period", t.memory.maintenance_period);
    read(m, mw, "admission_window", t.memory.admission_window);
    read(m, mw, "normalize_features", t.memory.normalize_features);
    read(m, mw, "literal_weight_rule", t.memory.literal_weight_rule);
    read(m, mw, "single_frame_admission", t.memory.single_frame_admission);
  }
}

json tracker_json(const TrackerConfig& t) {
  json m;
  m["capacity"] = t.memory.capacity;
  m["weight_cap"] = t.memory.weight_cap;
  m["delta_best"] = t.memory.delta_best;
  m["delta_other"] = t.memory.delta_other;
  m["tau1"] = t.memory.tau1;
  m["maintenance_period"] = t.memory.maintenance_period;
  m["admission_window"] = t.memory.admission_window;
  m["normalize_features"] = t.memory.normalize_features;
  m["literal_weight_rule"] = t.memory.literal_weight_rule;
  m["single_frame_admission"] = t.memory.single_frame_admission;

  json j;
  j["tau2"] = t.thresholds.tau2;
  j["tau3"] = t.thresholds.tau3;
  j["window"] = t.use_window;
  j["window_sigma_factor"] = t.window_sigma_factor;
  j["mmm"] = t.use_mmm;
  j["nl_during_lost"] = t.nl_during_lost;
  j["flow"] = t.use_flow;
  j["flow_block"] = t.flow_block;
  j["flow_range"] = t.flow_range;
  j["reset_period"] = t.reset_period;
  j["init_scale_factors"] = t.init_scale_factors;
  j["reset_scale_factors"] = t.reset_scale_factors;
  j["init_score_floor"] = t.init_score_floor;
  j["memory"] = m;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  require(kModes.count(mode) != 0,
          "config: mode must be nl-only, box-only, or box+nl, got '" + mode +
              "'");
  require(jobs >= 1, "config: jobs must be >= 1");
  tracker.validate();
}

TrackerConfig RunConfig::materialize_tracker() const {
  validate();
  TrackerConfig t = tracker;
  t.use_nl = mode != "box-only";
  return t;
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }
  check_keys(j, "",
             {"model", "sequences", "out", "seed", "jobs", "mode",
              "tracker"});
  RunConfig cfg;
  read(j, "", "model", cfg.model_dir);
  read(j, "", "sequences", cfg.sequence_dirs);
  read(j, "", "out", cfg.out_dir);
  read(j, "", "seed", cfg.seed);
  read(j, "", "jobs", cfg.jobs);
  read(j, "", "mode", cfg.mode);
  if (j.contains("tracker")) read_tracker(j.at("tracker"), cfg.tracker);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    require(f != nullptr, "config: cannot open " + path);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
    std::fclose(f);
  }
  return run_config_from_json_text(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = cfg.model_dir;
  j["sequences"] = cfg.sequence_dirs;
  j["out"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["mode"] = cfg.mode;
  j["tracker"] = tracker_json(cfg.tracker);
  return j.dump(2);
}

}  // namespace nltrack
