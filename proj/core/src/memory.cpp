#include "nltrack/memory.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nltrack/common.hpp"

namespace nltrack {

using nlohmann::json;

const char* to_string(TrackState s) {
  switch (s) {
    case TrackState::kStable: return "STABLE";
    case TrackState::kLost: return "LOST";
    case TrackState::kContinuedLost: return "CONTINUED_LOST";
    case TrackState::kRestoring: return "RESTORING";
  }
  return "?";
}

TrackState track_state_from_string(const std::string& s) {
  if (s == "STABLE") return TrackState::kStable;
  if (s == "LOST") return TrackState::kLost;
  if (s == "CONTINUED_LOST") return TrackState::kContinuedLost;
  if (s == "RESTORING") return TrackState::kRestoring;
  throw std::invalid_argument("unknown track state: " + s);
}

StateThresholds StateThresholds::checked(double tau2, double tau3) {
  require(0.0 < tau2 && tau2 < tau3 && tau3 < 1.0,
          "StateThresholds: need 0 < tau2 < tau3 < 1, got tau2=" +
              std::to_string(tau2) + " tau3=" + std::to_string(tau3));
  return StateThresholds{tau2, tau3};
}

ScoreHistory::ScoreHistory(int capacity) : capacity_(capacity) {
  require(capacity > 0, "ScoreHistory: non-positive capacity");
}

void ScoreHistory::record(std::int64_t frame, double score) {
  require(std::isfinite(score), "ScoreHistory: non-finite score at frame " +
                                    std::to_string(frame));
  entries_.emplace_back(frame, score);
  if (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

void ScoreHistory::amend_last(double score) {
  require(!entries_.empty(), "ScoreHistory: nothing to amend");
  require(std::isfinite(score), "ScoreHistory: non-finite amended score");
  entries_.back().second = score;
}

std::optional<double> ScoreHistory::avg_last(int n) const {
  require(n > 0 && n <= capacity_,
          "ScoreHistory::avg_last: window " + std::to_string(n) +
              " outside capacity " + std::to_string(capacity_));
  if (static_cast<int>(entries_.size()) < n) return std::nullopt;
  double sum = 0.0;
  for (auto it = entries_.end() - n; it != entries_.end(); ++it)
    sum += it->second;
  return sum / n;
}

std::optional<double> ScoreHistory::last() const {
  if (entries_.empty()) return std::nullopt;
  return entries_.back().second;
}

TrackState step_state(TrackState current, const ScoreHistory& hist,
                      const StateThresholds& th) {
  const auto below = [&](int n) {
    const auto a = hist.avg_last(n);
    return a && *a < th.tau2;
  };
  const auto above = [&](int n) {
    const auto a = hist.avg_last(n);
    return a && *a > th.tau3;
  };
  switch (current) {
    case TrackState::kStable:
      if (below(3)) return TrackState::kLost;
      return TrackState::kStable;
    case TrackState::kLost:
      if (above(5)) return TrackState::kStable;
      if (below(10)) return TrackState::kContinuedLost;
      return TrackState::kLost;
    case TrackState::kContinuedLost:
      if (above(5)) return TrackState::kRestoring;
      return TrackState::kContinuedLost;
    case TrackState::kRestoring:
      if (above(5)) return TrackState::kStable;
      if (below(5)) return TrackState::kContinuedLost;
      return TrackState::kRestoring;
  }
  return current;
}

void MemoryParams::validate() const {
  require(capacity >= 1, "MemoryParams: capacity must be at least 1");
  require(weight_cap > 0.0 && delta_best > 0.0 && delta_other >= 0.0,
          "MemoryParams: non-positive weight parameters");
  require(0.0 < tau1 && tau1 < 1.0, "MemoryParams: tau1 outside (0,1)");
  require(maintenance_period >= 1 && admission_window >= 1,
          "MemoryParams: non-positive periods");
}

const Exemplar* Memory::find(std::int64_t id) const {
  for (const auto& e : items)
    if (e.id == id) return &e;
  return nullptr;
}

namespace {

std::vector<double> flat_normalized(const FeatureMap& fm, bool normalize) {
  std::vector<double> v = fm.data;
  if (normalize) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& x : v) x /= norm;
  }
  return v;
}

double vec_distance(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

double feature_distance(const FeatureMap& a, const FeatureMap& b,
                        bool normalize) {
  require(a.width == b.width && a.height == b.height &&
              a.channels == b.channels,
          "feature_distance: shape mismatch " + a.shape_str() + " vs " +
              b.shape_str());
  return vec_distance(flat_normalized(a, normalize),
                      flat_normalized(b, normalize));
}

bool rnn_should_admit(const Memory& mem, const FeatureMap& cand,
                      bool normalize) {
  if (mem.items.size() <= 1) return true;
  std::vector<std::vector<double>> flats;
  flats.reserve(mem.items.size());
  for (const auto& e : mem.items)
    flats.push_back(flat_normalized(e.features, normalize));
  const std::vector<double> cf = flat_normalized(cand, normalize);

  for (std::size_t i = 0; i < flats.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    // Members are scanned first; the candidate only becomes the nearest
    // neighbour by being strictly closer than every member.
    bool cand_is_nn = false;
    for (std::size_t j = 0; j < flats.size(); ++j) {
      if (j == i) continue;
      best = std::min(best, vec_distance(flats[i], flats[j]));
    }
    if (vec_distance(flats[i], cf) < best) cand_is_nn = true;
    if (cand_is_nn) return false;
  }
  return true;
}

void update_weights(Memory& mem, std::int64_t best_id, const MemoryParams& p) {
  p.validate();
  require(mem.find(best_id) != nullptr,
          "update_weights: exemplar " + std::to_string(best_id) +
              " not in memory");
  for (auto& e : mem.items) {
    const bool is_best = e.id == best_id;
    const bool grow = p.literal_weight_rule ? !is_best : is_best;
    if (grow)
      e.weight = std::min(p.weight_cap, e.weight + p.delta_best);
    else
      e.weight -= p.delta_other;
  }
}

void maintain_memory(Memory& mem, const Exemplar& candidate,
                     const ScoreHistory& hist, TrackState state,
                     std::int64_t t, const MemoryParams& p) {
  p.validate();
  require(t >= 1, "maintain_memory: frame index must be positive");
  if (t % p.maintenance_period != 0 || state != TrackState::kStable) return;

  const std::optional<double> gate =
      p.single_frame_admission ? hist.last()
                               : hist.avg_last(p.admission_window);
  if (gate && *gate > p.tau1 &&
      rnn_should_admit(mem, candidate.features, p.normalize_features)) {
    if (static_cast<int>(mem.items.size()) >= p.capacity) {
      // Evict the lightest (oldest on ties) to make room.
      auto victim = mem.items.begin();
      for (auto it = mem.items.begin(); it != mem.items.end(); ++it)
        if (it->weight < victim->weight) victim = it;
      mem.items.erase(victim);
    }
    mem.items.push_back(candidate);
  }

  // Negative-weight removal; the memory never empties.
  while (mem.items.size() > 1) {
    auto victim = mem.items.end();
    for (auto it = mem.items.begin(); it != mem.items.end(); ++it)
      if (it->weight < 0.0 && (victim == mem.items.end() ||
                               it->weight < victim->weight))
        victim = it;
    if (victim == mem.items.end()) break;
    mem.items.erase(victim);
  }
}

void save_memory_snapshot(const Memory& mem, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json items = json::array();
  for (std::size_t i = 0; i < mem.items.size(); ++i) {
    const Exemplar& e = mem.items[i];
    const std::string file = "exemplar_" + std::to_string(i) + ".fmap";
    save_feature_map(e.features, dir + "/" + file);
    items.push_back(json{{"id", e.id},
                         {"born_at", e.born_at},
                         {"weight", e.weight},
                         {"source_box", {e.source_box.cx, e.source_box.cy,
                                         e.source_box.w, e.source_box.h}},
                         {"features", file}});
  }
  json manifest{{"format", "nltrack-memory/1"}, {"items", items}};
  std::ofstream out(dir + "/memory.json");
  require(out.good(), "save_memory_snapshot: cannot open " + dir);
  out << manifest.dump(2) << "\n";
}

Memory load_memory_snapshot(const std::string& dir) {
  std::ifstream in(dir + "/memory.json");
  require(in.good(), "load_memory_snapshot: cannot open " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_memory_snapshot: bad manifest: " +
                                std::string(e.what()));
  }
  require(manifest.value("format", "") == "nltrack-memory/1",
          "load_memory_snapshot: unsupported format in " + dir);
  Memory mem;
  for (const auto& item : manifest.at("items")) {
    Exemplar e;
    e.id = item.at("id").get<std::int64_t>();
    e.born_at = item.at("born_at").get<std::int64_t>();
    e.weight = item.at("weight").get<double>();
    const auto& sb = item.at("source_box");
    e.source_box = BBox{sb[0].get<double>(), sb[1].get<double>(),
                        sb[2].get<double>(), sb[3].get<double>()};
    e.features = load_feature_map(
        dir + "/" + item.at("features").get<std::string>());
    mem.items.push_back(std::move(e));
  }
  return mem;
}

}  // namespace nltrack
