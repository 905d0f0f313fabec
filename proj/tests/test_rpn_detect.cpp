#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "nltrack/rpn.hpp"
#include "test_util.hpp"

using namespace nltrack;

namespace {

Vocabulary tiny_vocab() {
  Vocabulary v;
  v.tokens = {"red", "blue", "square", "circle"};
  v.oov_buckets = 4;
  return v;
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.exemplar_px = 32;
  cfg.search_px = 64;
  cfg.exemplar_kernel_cells = 2;
  cfg.nl_kernel_cells = 3;
  cfg.head_channels = 4;
  return cfg;
}

// Brute-force reference for extract_detection with no window.
Detection oracle_argmax(const ScoreMap& cls, const RegMap& reg,
                        const AnchorGrid& grid) {
  const FeatureMap probs = foreground_softmax(cls);
  Detection best;
  best.score = -1.0;
  for (int y = 0; y < probs.height; ++y)
    for (int x = 0; x < probs.width; ++x)
      for (int a = 0; a < probs.channels; ++a) {
        if (probs.at(x, y, a) > best.score) {
          best.score = probs.at(x, y, a);
          best.cell_x = x;
          best.cell_y = y;
          best.anchor = a;
        }
      }
  const RegDelta d{reg.m.at(best.cell_x, best.cell_y, 4 * best.anchor),
                   reg.m.at(best.cell_x, best.cell_y, 4 * best.anchor + 1),
                   reg.m.at(best.cell_x, best.cell_y, 4 * best.anchor + 2),
                   reg.m.at(best.cell_x, best.cell_y, 4 * best.anchor + 3)};
  best.box =
      decode_box(grid.anchor_at(best.cell_x, best.cell_y, best.anchor), d);
  return best;
}

}  // namespace

TEST_CASE("zero language kernel yields uniform half scores") {
  const ModelConfig cfg = tiny_cfg();
  Model model = make_model(cfg, tiny_vocab(), 1);
  // Kill the path after correlation: zero reduce weights and biases.
  model.nl.reduce_cls =
      ProjectionHead::zeros(cfg.head_channels, 2 * cfg.num_anchors());
  model.nl.reduce_reg =
      ProjectionHead::zeros(cfg.head_channels, 4 * cfg.num_anchors());

  const int d = model.vocab.dim();
  const NLKernel kernel = build_nl_kernel(std::vector<double>(d, 0.25),
                                          model.nl);
  std::mt19937_64 rng(7);
  const FeatureMap search =
      testutil::random_map(8, 8, cfg.feature_channels, rng);
  const BranchOutput out = nl_rpn_forward(search, kernel, model.nl);

  const int cells = 8 - cfg.nl_kernel_cells + 1;
  CHECK(out.cls.m.width == cells);
  CHECK(out.cls.m.height == cells);
  CHECK(out.cls.m.channels == 2 * cfg.num_anchors());
  CHECK(out.reg.m.channels == 4 * cfg.num_anchors());

  const FeatureMap probs = foreground_softmax(out.cls);
  for (double v : probs.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("language branch output shapes follow the anchor layout") {
  const ModelConfig cfg = tiny_cfg();
  const Model model = make_model(cfg, tiny_vocab(), 3);
  const NLKernel kernel =
      build_nl_kernel(embed_sentence("red square", model.vocab), model.nl);
  std::mt19937_64 rng(8);
  const FeatureMap search =
      testutil::random_map(10, 9, cfg.feature_channels, rng);
  const BranchOutput out = nl_rpn_forward(search, kernel, model.nl);
  CHECK(out.cls.m.width == 10 - cfg.nl_kernel_cells + 1);
  CHECK(out.cls.m.height == 9 - cfg.nl_kernel_cells + 1);
  CHECK(out.cls.m.channels == 2 * cfg.num_anchors());
  CHECK(out.reg.m.width == out.cls.m.width);
  CHECK(out.reg.m.channels == 4 * cfg.num_anchors());
  for (double v : out.cls.m.data) CHECK(std::isfinite(v));
}

TEST_CASE("zero visual heads yield uniform half scores") {
  const ModelConfig cfg = tiny_cfg();
  Model model = make_model(cfg, tiny_vocab(), 2);
  model.visual.reduce_cls =
      ProjectionHead::zeros(cfg.head_channels, 2 * cfg.num_anchors());
  model.visual.reduce_reg =
      ProjectionHead::zeros(cfg.head_channels, 4 * cfg.num_anchors());

  std::mt19937_64 rng(9);
  const FeatureMap search =
      testutil::random_map(8, 8, cfg.feature_channels, rng);
  const FeatureMap exemplar =
      testutil::random_map(4, 4, cfg.feature_channels, rng);
  const BranchOutput out =
      siam_rpn_forward(search, exemplar, model.visual,
                       cfg.exemplar_kernel_cells);
  const int cells = 8 - cfg.exemplar_kernel_cells + 1;
  CHECK(out.cls.m.width == cells);
  const FeatureMap probs = foreground_softmax(out.cls);
  for (double v : probs.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("template branch rejects incompatible shapes") {
  const ModelConfig cfg = tiny_cfg();
  const Model model = make_model(cfg, tiny_vocab(), 2);
  std::mt19937_64 rng(10);
  const FeatureMap search =
      testutil::random_map(8, 8, cfg.feature_channels, rng);
  const FeatureMap tiny_exemplar =
      testutil::random_map(1, 1, cfg.feature_channels, rng);
  CHECK_THROWS(siam_rpn_forward(search, tiny_exemplar, model.visual,
                                cfg.exemplar_kernel_cells));
  const FeatureMap bad_channels = testutil::random_map(4, 4, 3, rng);
  CHECK_THROWS(siam_rpn_forward(search, bad_channels, model.visual,
                                cfg.exemplar_kernel_cells));
}

TEST_CASE("exemplar selection takes the highest peak, oldest on ties") {
  ScoreMap a = ScoreMap::wrap(FeatureMap(2, 2, 2));
  ScoreMap b = ScoreMap::wrap(FeatureMap(2, 2, 2));
  // Logit gap 2 in map a at one cell; flat in b.
  a.m.at(1, 0, 1) = 2.0;
  CHECK(peak_score(a) > peak_score(b));

  SUBCASE("larger peak wins regardless of order") {
    const std::vector<ScoredExemplar> fwd = {{10, 0, &a}, {11, 1, &b}};
    const std::vector<ScoredExemplar> rev = {{11, 1, &b}, {10, 0, &a}};
    CHECK(select_best_exemplar(fwd) == 10);
    CHECK(select_best_exemplar(rev) == 10);
  }
  SUBCASE("single entry returns itself") {
    CHECK(select_best_exemplar({{42, 7, &b}}) == 42);
  }
  SUBCASE("exact tie goes to the earlier exemplar") {
    const std::vector<ScoredExemplar> tie = {{5, 9, &a}, {4, 3, &a}};
    CHECK(select_best_exemplar(tie) == 4);
  }
  SUBCASE("empty memory demands the language fallback") {
    CHECK_THROWS_WITH_AS(select_best_exemplar({}),
                         doctest::Contains("language"), std::invalid_argument);
  }
}

TEST_CASE("selection equals a brute-force scan on random maps") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FeatureMap> maps;
    for (int i = 0; i < 4; ++i)
      maps.push_back(testutil::random_map(3, 3, 4, rng, -3.0, 3.0));
    std::vector<ScoreMap> wrapped;
    for (auto& m : maps) wrapped.push_back(ScoreMap::wrap(m));
    std::vector<ScoredExemplar> entries;
    for (int i = 0; i < 4; ++i)
      entries.push_back({i, i, &wrapped[i]});

    double best = -1.0;
    std::int64_t best_id = -1;
    for (int i = 0; i < 4; ++i) {
      const double p = peak_score(wrapped[i]);
      if (p > best) {
        best = p;
        best_id = i;
      }
    }
    CHECK(select_best_exemplar(entries) == best_id);
  }
}

TEST_CASE("single-anchor map decodes that anchor") {
  const AnchorGrid grid{1, 1, 8, {64.0}, {1.0}};
  FeatureMap cls(1, 1, 2);
  cls.at(0, 0, 1) = 3.0;  // foreground logit
  FeatureMap reg(1, 1, 4);
  reg.at(0, 0, 0) = 0.25;  // dx in anchor widths
  const Detection det = extract_detection(ScoreMap::wrap(cls),
                                          RegMap::wrap(reg), grid,
                                          std::nullopt);
  CHECK(det.cell_x == 0);
  CHECK(det.anchor == 0);
  // Anchor (4,4,8,8) shifted right by 0.25 * 8.
  CHECK(det.box.cx == doctest::Approx(6.0));
  CHECK(det.box.cy == doctest::Approx(4.0));
  CHECK(det.box.w == doctest::Approx(8.0));
  CHECK(det.score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("uniform scores with a window select the window center") {
  const AnchorGrid grid{5, 5, 8, {64.0}, {1.0}};
  const FeatureMap cls(5, 5, 2);  // all-zero logits, probability 0.5
  const FeatureMap reg(5, 5, 4);
  const WindowSpec win{2.0, 2.0, 1.0};
  const Detection det = extract_detection(ScoreMap::wrap(cls),
                                          RegMap::wrap(reg), grid, win);
  CHECK(det.cell_x == 2);
  CHECK(det.cell_y == 2);
  // Reported confidence is the raw probability, not the windowed one.
  CHECK(det.score == doctest::Approx(0.5));
}

TEST_CASE("windowless extraction equals the brute-force oracle") {
  std::mt19937_64 rng(31);
  const AnchorGrid grid{4, 3, 8, {64.0, 128.0}, {0.5, 1.0, 2.0}};
  for (int trial = 0; trial < 60; ++trial) {
    FeatureMap cls = testutil::random_map(4, 3, 12, rng, -4.0, 4.0);
    FeatureMap reg = testutil::random_map(4, 3, 24, rng, -0.4, 0.4);
    const ScoreMap sm = ScoreMap::wrap(cls);
    const RegMap rm = RegMap::wrap(reg);
    const Detection got = extract_detection(sm, rm, grid, std::nullopt);
    const Detection want = oracle_argmax(sm, rm, grid);
    CHECK(got.cell_x == want.cell_x);
    CHECK(got.cell_y == want.cell_y);
    CHECK(got.anchor == want.anchor);
    CHECK(got.score == doctest::Approx(want.score));
    CHECK(got.box.cx == doctest::Approx(want.box.cx));
    CHECK(got.box.w == doctest::Approx(want.box.w));
  }
}

TEST_CASE("adding a constant to foreground logits keeps the winner") {
  std::mt19937_64 rng(41);
  const AnchorGrid grid{3, 3, 8, {64.0}, {0.5, 1.0}};
  FeatureMap cls = testutil::random_map(3, 3, 4, rng, -2.0, 2.0);
  FeatureMap reg(3, 3, 8);
  const Detection before = extract_detection(ScoreMap::wrap(cls),
                                             RegMap::wrap(reg), grid,
                                             std::nullopt);
  FeatureMap shifted = cls;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      for (int a = 0; a < 2; ++a) shifted.at(x, y, 2 * a + 1) += 1.7;
  const Detection after = extract_detection(ScoreMap::wrap(shifted),
                                            RegMap::wrap(reg), grid,
                                            std::nullopt);
  CHECK(after.cell_x == before.cell_x);
  CHECK(after.cell_y == before.cell_y);
  CHECK(after.anchor == before.anchor);
  CHECK(after.score > before.score);
}

TEST_CASE("detection validates grid and map agreement") {
  const AnchorGrid grid{4, 4, 8, {64.0}, {1.0}};
  const FeatureMap cls(3, 3, 2);
  const FeatureMap reg(3, 3, 4);
  CHECK_THROWS(extract_detection(ScoreMap::wrap(cls), RegMap::wrap(reg), grid,
                                 std::nullopt));
  const FeatureMap cls4(4, 4, 4);  // two anchors vs grid's one
  const FeatureMap reg4(4, 4, 8);
  CHECK_THROWS(extract_detection(ScoreMap::wrap(cls4), RegMap::wrap(reg4),
                                 grid, std::nullopt));
}
