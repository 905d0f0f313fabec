#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "nltrack/memory.hpp"
#include "test_util.hpp"

using namespace nltrack;
using testutil::TempDir;

namespace {

ScoreHistory history_of(const std::vector<double>& scores) {
  ScoreHistory h;
  std::int64_t t = 0;
  for (double s : scores) h.record(t++, s);
  return h;
}

FeatureMap vec_features(const std::vector<double>& v) {
  FeatureMap fm(1, 1, static_cast<int>(v.size()));
  fm.data = v;
  return fm;
}

Exemplar make_exemplar(std::int64_t id, const std::vector<double>& v,
                       double weight = 1.0) {
  Exemplar e;
  e.id = id;
  e.born_at = id;
  e.weight = weight;
  e.source_box = BBox{10, 10, 4, 4};
  e.features = vec_features(v);
  return e;
}

// Independent reverse-NN check: the candidate is rejected iff some member's
// nearest neighbour over (members + candidate) minus itself is the
// candidate, with ties favouring members.
bool brute_force_admit(const Memory& mem, const FeatureMap& cand,
                       bool normalize) {
  if (mem.items.size() <= 1) return true;
  for (std::size_t i = 0; i < mem.items.size(); ++i) {
    double best_member = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < mem.items.size(); ++j) {
      if (i == j) continue;
      best_member = std::min(
          best_member, feature_distance(mem.items[i].features,
                                        mem.items[j].features, normalize));
    }
    const double to_cand =
        feature_distance(mem.items[i].features, cand, normalize);
    if (to_cand < best_member) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("window averages need a full window") {
  ScoreHistory h;
  CHECK_FALSE(h.avg_last(3).has_value());
  CHECK_FALSE(h.last().has_value());
  h.record(0, 0.2);
  h.record(1, 0.4);
  CHECK_FALSE(h.avg_last(3).has_value());
  CHECK(h.last().value() == doctest::Approx(0.4));
  h.record(2, 0.9);
  CHECK(h.avg_last(3).value() == doctest::Approx(0.5));
  CHECK(h.avg_last(2).value() == doctest::Approx(0.65));
  h.record(3, 0.1);
  CHECK(h.avg_last(3).value() == doctest::Approx((0.4 + 0.9 + 0.1) / 3));
  CHECK_THROWS(h.record(4, std::nan("")));
}

TEST_CASE("ring buffer keeps only the newest capacity scores") {
  ScoreHistory h(4);
  for (int i = 0; i < 10; ++i) h.record(i, i * 0.1);
  CHECK(h.size() == 4);
  CHECK(h.avg_last(4).value() == doctest::Approx((0.6 + 0.7 + 0.8 + 0.9) / 4));
  CHECK_THROWS(h.avg_last(5));  // wider than the buffer can ever satisfy
  CHECK_THROWS(ScoreHistory{0});
}

TEST_CASE("threshold validation") {
  CHECK_NOTHROW(StateThresholds::checked(0.4, 0.7));
  CHECK_THROWS(StateThresholds::checked(0.7, 0.4));
  CHECK_THROWS(StateThresholds::checked(0.0, 0.7));
  CHECK_THROWS(StateThresholds::checked(0.4, 1.0));
}

TEST_CASE("single transitions match the diagram") {
  const StateThresholds th = StateThresholds::checked(0.5, 0.8);

  CHECK(step_state(TrackState::kStable, history_of({0.1, 0.1, 0.1}), th) ==
        TrackState::kLost);
  CHECK(step_state(TrackState::kLost,
                   history_of({0.95, 0.95, 0.95, 0.95, 0.95}), th) ==
        TrackState::kStable);
  CHECK(step_state(TrackState::kLost,
                   history_of(std::vector<double>(10, 0.1)), th) ==
        TrackState::kContinuedLost);
  CHECK(step_state(TrackState::kContinuedLost,
                   history_of({0.95, 0.95, 0.95, 0.95, 0.95}), th) ==
        TrackState::kRestoring);
  CHECK(step_state(TrackState::kRestoring,
                   history_of({0.95, 0.95, 0.95, 0.95, 0.95}), th) ==
        TrackState::kStable);
  CHECK(step_state(TrackState::kRestoring,
                   history_of({0.1, 0.1, 0.1, 0.1, 0.1}), th) ==
        TrackState::kContinuedLost);

  // Nothing moves while windows are unfilled or scores sit between bands.
  CHECK(step_state(TrackState::kStable, history_of({0.1, 0.1}), th) ==
        TrackState::kStable);
  CHECK(step_state(TrackState::kLost, history_of({0.6, 0.6, 0.6, 0.6, 0.6}),
                   th) == TrackState::kLost);
  CHECK(step_state(TrackState::kRestoring,
                   history_of({0.6, 0.6, 0.6, 0.6, 0.6}), th) ==
        TrackState::kRestoring);
}

TEST_CASE("recovery beats decay when both windows fire") {
  const StateThresholds th = StateThresholds::checked(0.4, 0.7);
  // Last 5 average 0.75 (> tau3) while last 10 average 0.375 (< tau2).
  std::vector<double> scores(5, 0.0);
  scores.insert(scores.end(), 5, 0.75);
  CHECK(step_state(TrackState::kLost, history_of(scores), th) ==
        TrackState::kStable);
}

TEST_CASE("only the diagram's edges are ever taken") {
  const StateThresholds th = StateThresholds::checked(0.4, 0.7);
  const std::set<std::pair<TrackState, TrackState>> allowed = {
      {TrackState::kStable, TrackState::kLost},
      {TrackState::kLost, TrackState::kStable},
      {TrackState::kLost, TrackState::kContinuedLost},
      {TrackState::kContinuedLost, TrackState::kRestoring},
      {TrackState::kRestoring, TrackState::kStable},
      {TrackState::kRestoring, TrackState::kContinuedLost},
  };

  // Exhaustive walk over score sequences from a three-band alphabet. The
  // recursion carries the (state, history) pair; depth 9 is 19k sequences.
  const std::vector<double> alphabet = {0.1, 0.55, 0.95};
  std::set<TrackState> reached = {TrackState::kStable};
  std::set<std::pair<TrackState, TrackState>> seen;

  struct Walker {
    const StateThresholds& th;
    const std::vector<double>& alphabet;
    std::set<TrackState>& reached;
    std::set<std::pair<TrackState, TrackState>>& seen;
    void walk(TrackState state, ScoreHistory& hist, std::int64_t t,
              int depth) {
      if (depth == 0) return;
      for (double s : alphabet) {
        ScoreHistory next = hist;
        next.record(t, s);
        const TrackState to = step_state(state, next, th);
        if (to != state) seen.insert({state, to});
        reached.insert(to);
        walk(to, next, t + 1, depth - 1);
      }
    }
  };
  ScoreHistory hist(16);
  Walker{th, alphabet, reached, seen}.walk(TrackState::kStable, hist, 0, 9);

  for (const auto& edge : seen) CHECK(allowed.count(edge) == 1);
  CHECK(reached.count(TrackState::kLost) == 1);

  // Depth 9 cannot fill the 10-frame window; reach the far states with one
  // crafted long run instead.
  ScoreHistory long_hist(16);
  TrackState s = TrackState::kStable;
  std::int64_t t = 0;
  auto feed = [&](double score, int times) {
    for (int i = 0; i < times; ++i) {
      long_hist.record(t++, score);
      const TrackState to = step_state(s, long_hist, th);
      if (to != s) CHECK(allowed.count({s, to}) == 1);
      s = to;
      reached.insert(s);
    }
  };
  feed(0.1, 13);
  CHECK(s == TrackState::kContinuedLost);
  feed(0.95, 5);
  CHECK(reached.count(TrackState::kRestoring) == 1);
  CHECK(s == TrackState::kStable);
  CHECK(reached.size() == 4);
}

TEST_CASE("state names roundtrip") {
  for (TrackState s :
       {TrackState::kStable, TrackState::kLost, TrackState::kContinuedLost,
        TrackState::kRestoring})
    CHECK(track_state_from_string(to_string(s)) == s);
  CHECK(std::string(to_string(TrackState::kContinuedLost)) ==
        "CONTINUED_LOST");
  CHECK_THROWS(track_state_from_string("WANDERING"));
}

TEST_CASE("first two exemplars are always admitted") {
  Memory mem;
  CHECK(rnn_should_admit(mem, vec_features({1, 2}), false));
  mem.items.push_back(make_exemplar(0, {0, 0}));
  CHECK(rnn_should_admit(mem, vec_features({0, 0}), false));
}

TEST_CASE("near candidates are rejected, far candidates admitted") {
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}));
  mem.items.push_back(make_exemplar(1, {10, 10}));
  // (0,0)'s nearest neighbour becomes the candidate: reject.
  CHECK_FALSE(rnn_should_admit(mem, vec_features({0.1, 0}), false));
  // Both members stay each other's nearest neighbour: admit.
  CHECK(rnn_should_admit(mem, vec_features({100, 100}), false));
}

TEST_CASE("admission matches the brute-force oracle on random sets") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::uniform_int_distribution<int> size_dist(0, 6);
  int rejections = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const bool normalize = trial % 2 == 0;
    Memory mem;
    const int n = size_dist(rng);
    for (int i = 0; i < n; ++i)
      mem.items.push_back(
          make_exemplar(i, {dist(rng), dist(rng), dist(rng), dist(rng)}));
    const FeatureMap cand =
        vec_features({dist(rng), dist(rng), dist(rng), dist(rng)});
    const bool got = rnn_should_admit(mem, cand, normalize);
    CHECK(got == brute_force_admit(mem, cand, normalize));
    rejections += got ? 0 : 1;
  }
  CHECK(rejections > 20);  // the oracle comparison must exercise both answers
}

TEST_CASE("normalized distance ignores feature scale") {
  CHECK(feature_distance(vec_features({1, 0}), vec_features({3, 0}), true) ==
        doctest::Approx(0.0));
  CHECK(feature_distance(vec_features({1, 0}), vec_features({3, 0}), false) ==
        doctest::Approx(2.0));
  CHECK_THROWS(feature_distance(vec_features({1, 0}),
                                vec_features({1, 0, 0}), false));
}

TEST_CASE("weight update grows the matched exemplar and decays the rest") {
  MemoryParams p;
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}, 1.0));
  mem.items.push_back(make_exemplar(1, {5, 5}, 1.0));
  update_weights(mem, 0, p);
  CHECK(mem.items[0].weight == doctest::Approx(2.0));
  CHECK(mem.items[1].weight == doctest::Approx(0.8));

  // Never best: five updates take 1.0 to exactly 0.
  Memory drain;
  drain.items.push_back(make_exemplar(0, {0, 0}, 1.0));
  drain.items.push_back(make_exemplar(1, {5, 5}, 1.0));
  for (int i = 0; i < 5; ++i) update_weights(drain, 0, p);
  CHECK(drain.items[1].weight == doctest::Approx(0.0));

  CHECK_THROWS(update_weights(mem, 77, p));
}

TEST_CASE("weights saturate at the cap and never regress while matched") {
  MemoryParams p;
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}, 1.0));
  double prev = mem.items[0].weight;
  for (int i = 0; i < 20; ++i) {
    update_weights(mem, 0, p);
    CHECK(mem.items[0].weight >= prev);
    prev = mem.items[0].weight;
    CHECK(mem.items[0].weight <= p.weight_cap);
  }
  CHECK(mem.items[0].weight == doctest::Approx(p.weight_cap));
}

TEST_CASE("swapped-role variant decays the matched exemplar") {
  MemoryParams p;
  p.literal_weight_rule = true;
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}, 1.0));
  mem.items.push_back(make_exemplar(1, {5, 5}, 1.0));
  update_weights(mem, 0, p);
  CHECK(mem.items[0].weight == doctest::Approx(0.8));
  CHECK(mem.items[1].weight == doctest::Approx(2.0));
}

TEST_CASE("maintenance runs only on stable maintenance frames") {
  MemoryParams p;
  ScoreHistory hist;
  for (int i = 0; i < 50; ++i) hist.record(i, 0.995);
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}));
  const Exemplar cand = make_exemplar(99, {50, 50});

  Memory lost = mem;
  maintain_memory(lost, cand, hist, TrackState::kLost, 50, p);
  CHECK(lost.items.size() == 1);

  Memory off_period = mem;
  maintain_memory(off_period, cand, hist, TrackState::kStable, 51, p);
  CHECK(off_period.items.size() == 1);

  Memory stable = mem;
  maintain_memory(stable, cand, hist, TrackState::kStable, 50, p);
  REQUIRE(stable.items.size() == 2);
  CHECK(stable.items[1].id == 99);
}

TEST_CASE("admission gate needs the windowed average above tau1") {
  MemoryParams p;
  ScoreHistory cold;
  for (int i = 0; i < 50; ++i) cold.record(i, i < 5 ? 0.5 : 0.995);
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}));
  const Exemplar cand = make_exemplar(99, {50, 50});
  maintain_memory(mem, cand, cold, TrackState::kStable, 50, p);
  CHECK(mem.items.size() == 1);  // mean 0.9455 < 0.99

  // Single-frame mode looks only at the newest score.
  p.single_frame_admission = true;
  maintain_memory(mem, cand, cold, TrackState::kStable, 50, p);
  CHECK(mem.items.size() == 2);
}

TEST_CASE("short histories cannot pass the windowed gate") {
  MemoryParams p;
  ScoreHistory brief;
  for (int i = 0; i < 10; ++i) brief.record(i, 0.999);
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}));
  maintain_memory(mem, make_exemplar(99, {50, 50}), brief,
                  TrackState::kStable, 25, p);
  CHECK(mem.items.size() == 1);
}

TEST_CASE("novelty check guards admission") {
  MemoryParams p;
  p.normalize_features = false;
  ScoreHistory hist;
  for (int i = 0; i < 50; ++i) hist.record(i, 0.995);
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}));
  mem.items.push_back(make_exemplar(1, {10, 10}));
  maintain_memory(mem, make_exemplar(99, {0.1, 0}), hist, TrackState::kStable,
                  50, p);
  CHECK(mem.items.size() == 2);  // rejected as redundant
  maintain_memory(mem, make_exemplar(99, {100, 100}), hist,
                  TrackState::kStable, 50, p);
  CHECK(mem.items.size() == 3);
}

TEST_CASE("negative weights are removed but the memory never empties") {
  MemoryParams p;
  ScoreHistory hist;
  for (int i = 0; i < 50; ++i) hist.record(i, 0.5);  // gate closed
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}, -0.2));
  mem.items.push_back(make_exemplar(1, {10, 10}, 3.0));
  maintain_memory(mem, make_exemplar(99, {50, 50}), hist, TrackState::kStable,
                  50, p);
  REQUIRE(mem.items.size() == 1);
  CHECK(mem.items[0].id == 1);

  Memory lone;
  lone.items.push_back(make_exemplar(0, {0, 0}, -5.0));
  maintain_memory(lone, make_exemplar(99, {50, 50}), hist,
                  TrackState::kStable, 50, p);
  CHECK(lone.items.size() == 1);
}

TEST_CASE("full memory evicts its lightest exemplar on admission") {
  MemoryParams p;
  p.capacity = 3;
  p.normalize_features = false;
  ScoreHistory hist;
  for (int i = 0; i < 50; ++i) hist.record(i, 0.995);
  Memory mem;
  mem.items.push_back(make_exemplar(0, {0, 0}, 2.0));
  mem.items.push_back(make_exemplar(1, {40, 0}, 0.3));
  mem.items.push_back(make_exemplar(2, {0, 40}, 5.0));
  maintain_memory(mem, make_exemplar(99, {40, 40}), hist, TrackState::kStable,
                  50, p);
  REQUIRE(mem.items.size() == 3);
  CHECK(mem.find(1) == nullptr);
  CHECK(mem.find(99) != nullptr);
}

TEST_CASE("snapshots roundtrip") {
  TempDir tmp("memsnap");
  Memory mem;
  mem.items.push_back(make_exemplar(3, {1.5, -2.25}, 4.0));
  mem.items.push_back(make_exemplar(8, {0.5, 0.125}, 0.7));
  save_memory_snapshot(mem, tmp.str());
  const Memory back = load_memory_snapshot(tmp.str());
  REQUIRE(back.items.size() == 2);
  CHECK(back.items[0].id == 3);
  CHECK(back.items[0].weight == 4.0);
  CHECK(back.items[0].features.data == mem.items[0].features.data);
  CHECK(back.items[1].source_box.cx == 10.0);
  CHECK_THROWS(load_memory_snapshot(tmp.str() + "/missing"));
}
