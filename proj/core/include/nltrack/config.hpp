#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nltrack/tracker.hpp"

namespace nltrack {

// One batch run, as described by a config file. The mode string selects how
// sessions initialize and whether the language branch exists at all:
// "box-only" ignores queries entirely, "nl-only" initializes from the query
// with no first-frame box, "box+nl" uses both.
struct RunConfig {
  std::string model_dir;
  std::vector<std::string> sequence_dirs;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string mode = "box+nl";
  TrackerConfig tracker;

  void validate() const;
  // The tracker configuration with the mode folded in.
  TrackerConfig materialize_tracker() const;
};

RunConfig default_run_config();

// Strict parser: every unknown key is an error naming the key, every value
// must have the right type, missing keys keep their defaults.
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

std::string run_config_to_json(const RunConfig& cfg);

}  // namespace nltrack
