#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/tensor.hpp"

namespace nltrack {

enum class TrackState { kStable, kLost, kContinuedLost, kRestoring };

const char* to_string(TrackState s);
TrackState track_state_from_string(const std::string& s);

// tau2 is the loss threshold, tau3 the recovery threshold; 0 < tau2 < tau3 < 1
// is enforced here so the transition rules can never conflict.
struct StateThresholds {
  double tau2 = 0.4;
  double tau3 = 0.7;
  static StateThresholds checked(double tau2, double tau3);
};

// Recent confidence scores, newest last. Window averages are undefined until
// enough scores exist; callers treat undefined as "condition not met".
class ScoreHistory {
 public:
  explicit ScoreHistory(int capacity = 64);
  void record(std::int64_t frame, double score);
  // Replaces the score of the most recent entry, keeping its frame index.
  void amend_last(double score);
  // Mean of exactly the last n recorded scores; nullopt while fewer exist.
  std::optional<double> avg_last(int n) const;
  std::optional<double> last() const;
  std::size_t size() const { return entries_.size(); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::deque<std::pair<std::int64_t, double>> entries_;
};

// One transition of the confidence state machine. Transitions out of a state
// are evaluated recovery-first: a defined window above tau3 promotes before
// any decay rule is considered.
TrackState step_state(TrackState current, const ScoreHistory& hist,
                      const StateThresholds& th);

struct Exemplar {
  std::int64_t id = 0;
  std::int64_t born_at = 0;  // frame index at capture
  double weight = 1.0;
  BBox source_box;           // frame coordinates at capture
  FeatureMap features;
};

struct MemoryParams {
  int capacity = 8;
  double weight_cap = 10.0;
  double delta_best = 1.0;
  double delta_other = 0.2;
  double tau1 = 0.99;          // admission confidence gate
  int maintenance_period = 25;
  int admission_window = 50;   // frames averaged for the admission gate
  bool normalize_features = true;  // L2-normalise before distances
  // Swapped role variant: the matched exemplar decays and the others grow.
  bool literal_weight_rule = false;
  // Gate admission on the latest score instead of the window mean.
  bool single_frame_admission = false;
  void validate() const;
};

struct Memory {
  std::vector<Exemplar> items;  // insertion order == born_at order
  const Exemplar* find(std::int64_t id) const;
};

// Euclidean distance between flattened feature tensors, optionally after
// L2 normalisation (zero-norm tensors pass through unnormalised).
double feature_distance(const FeatureMap& a, const FeatureMap& b,
                        bool normalize);

// Admit iff no current member has the candidate as its nearest neighbour
// when searching over (members + candidate) minus itself. The first or
// second exemplar is always admitted. Ties in distance favour members: the
// candidate must be strictly closest to count as a neighbour.
bool rnn_should_admit(const Memory& mem, const FeatureMap& cand,
                      bool normalize);

// Per-frame reweighting given the matched exemplar. Growth saturates at
// weight_cap; decay has no floor (removal happens during maintenance).
void update_weights(Memory& mem, std::int64_t best_id, const MemoryParams& p);

// Periodic consolidation: only on maintenance frames in the stable state.
// Admission (confidence gate + reverse-NN novelty, evicting the lightest
// exemplar when full) runs before removal of negative-weight exemplars; the
// last remaining exemplar is never removed.
void maintain_memory(Memory& mem, const Exemplar& candidate,
                     const ScoreHistory& hist, TrackState state,
                     std::int64_t t, const MemoryParams& p);

void save_memory_snapshot(const Memory& mem, const std::string& dir);
Memory load_memory_snapshot(const std::string& dir);

}  // namespace nltrack
