#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nltrack/tensor.hpp"
#include "test_util.hpp"

using namespace nltrack;

TEST_CASE("xcorr with 1x1 kernel scales the input") {
  FeatureMap s(2, 2, 1);
  s.at(0, 0, 0) = 1;
  s.at(1, 0, 0) = 2;
  s.at(0, 1, 0) = 3;
  s.at(1, 1, 0) = 4;
  FeatureMap k(1, 1, 1);
  k.at(0, 0, 0) = 2;
  const FeatureMap out = depthwise_xcorr(s, k);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 2);
  CHECK(out.at(0, 0, 0) == doctest::Approx(2));
  CHECK(out.at(1, 0, 0) == doctest::Approx(4));
  CHECK(out.at(0, 1, 0) == doctest::Approx(6));
  CHECK(out.at(1, 1, 0) == doctest::Approx(8));
}

TEST_CASE("full-window self correlation gives the energy per channel") {
  std::mt19937_64 rng(3);
  const FeatureMap s = testutil::random_map(4, 3, 2, rng);
  const FeatureMap out = depthwise_xcorr(s, s);
  REQUIRE(out.width == 1);
  REQUIRE(out.height == 1);
  for (int c = 0; c < 2; ++c) {
    double energy = 0.0;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) energy += s.at(x, y, c) * s.at(x, y, c);
    CHECK(out.at(0, 0, c) == doctest::Approx(energy));
  }
}

TEST_CASE("xcorr matches the naive loop oracle") {
  std::mt19937_64 rng(11);
  SUBCASE("fixed 5x5x3 against 3x3x3") {
    const FeatureMap s = testutil::random_map(5, 5, 3, rng);
    const FeatureMap k = testutil::random_map(3, 3, 3, rng);
    const FeatureMap got = depthwise_xcorr(s, k);
    const FeatureMap ref = testutil::naive_xcorr(s, k);
    REQUIRE(got.data.size() == ref.data.size());
    for (std::size_t i = 0; i < got.data.size(); ++i)
      CHECK(std::abs(got.data[i] - ref.data[i]) < 1e-12);
  }
  SUBCASE("exhaustive small shapes") {
    for (int sw = 1; sw <= 4; ++sw)
      for (int sh = 1; sh <= 4; ++sh)
        for (int kw = 1; kw <= sw; ++kw)
          for (int kh = 1; kh <= sh; ++kh)
            for (int c = 1; c <= 2; ++c) {
              const FeatureMap s = testutil::random_map(sw, sh, c, rng);
              const FeatureMap k = testutil::random_map(kw, kh, c, rng);
              const FeatureMap got = depthwise_xcorr(s, k);
              const FeatureMap ref = testutil::naive_xcorr(s, k);
              for (std::size_t i = 0; i < got.data.size(); ++i)
                CHECK(std::abs(got.data[i] - ref.data[i]) < 1e-12);
            }
  }
}

TEST_CASE("xcorr is linear in the search input") {
  std::mt19937_64 rng(13);
  const FeatureMap a = testutil::random_map(6, 5, 2, rng);
  const FeatureMap b = testutil::random_map(6, 5, 2, rng);
  const FeatureMap k = testutil::random_map(3, 2, 2, rng);
  FeatureMap sum = a;
  for (std::size_t i = 0; i < sum.data.size(); ++i)
    sum.data[i] = 2.0 * a.data[i] + 3.0 * b.data[i];
  const FeatureMap lhs = depthwise_xcorr(sum, k);
  const FeatureMap ra = depthwise_xcorr(a, k);
  const FeatureMap rb = depthwise_xcorr(b, k);
  for (std::size_t i = 0; i < lhs.data.size(); ++i)
    CHECK(std::abs(lhs.data[i] - (2.0 * ra.data[i] + 3.0 * rb.data[i])) <
          1e-10);
}

TEST_CASE("xcorr shape validation") {
  const FeatureMap s(4, 4, 2);
  CHECK_THROWS_WITH_AS(depthwise_xcorr(s, FeatureMap(3, 5, 2)),
                       doctest::Contains("3x5x2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(depthwise_xcorr(s, FeatureMap(2, 2, 3)),
                       doctest::Contains("channel mismatch"),
                       std::invalid_argument);
}

TEST_CASE("foreground softmax") {
  SUBCASE("equal logits give one half") {
    FeatureMap fm(2, 1, 4);
    const FeatureMap p = foreground_softmax(ScoreMap::wrap(fm));
    REQUIRE(p.channels == 2);
    CHECK(p.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(p.at(1, 0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("logit gap of ln 3 gives 0.75") {
    FeatureMap fm(1, 1, 2);
    fm.at(0, 0, 0) = 0.0;
    fm.at(0, 0, 1) = std::log(3.0);
    const FeatureMap p = foreground_softmax(ScoreMap::wrap(fm));
    CHECK(p.at(0, 0, 0) == doctest::Approx(0.75));
  }
  SUBCASE("large logits stay finite") {
    FeatureMap fm(1, 1, 2);
    fm.at(0, 0, 0) = 0.0;
    fm.at(0, 0, 1) = 1000.0;
    const FeatureMap p = foreground_softmax(ScoreMap::wrap(fm));
    CHECK(std::isfinite(p.at(0, 0, 0)));
    CHECK(p.at(0, 0, 0) == doctest::Approx(1.0));
    fm.at(0, 0, 1) = -1000.0;
    const FeatureMap q = foreground_softmax(ScoreMap::wrap(fm));
    CHECK(q.at(0, 0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("scores lie in [0,1] and increase with the gap") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-30, 30);
    double prev_gap = -1e9, prev_score = 0.0;
    for (int i = 0; i < 200; ++i) {
      FeatureMap fm(1, 1, 2);
      fm.at(0, 0, 0) = d(rng);
      fm.at(0, 0, 1) = d(rng);
      const double gap = fm.at(0, 0, 1) - fm.at(0, 0, 0);
      const double s = foreground_softmax(ScoreMap::wrap(fm)).at(0, 0, 0);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      if (gap > prev_gap && i > 0) CHECK(s >= prev_score - 1e-12);
      // Keep a sorted walk: only compare when the gap actually grew.
      if (gap > prev_gap) {
        prev_gap = gap;
        prev_score = s;
      }
    }
  }
  SUBCASE("odd channel count is rejected") {
    CHECK_THROWS_AS(ScoreMap::wrap(FeatureMap(2, 2, 3)),
                    std::invalid_argument);
  }
}

TEST_CASE("gaussian window") {
  FeatureMap uniform(7, 7, 2);
  for (double& v : uniform.data) v = 1.0;
  const double sigma = default_window_sigma(7, 7);
  CHECK(sigma == doctest::Approx(1.4));
  const FeatureMap w = gaussian_window(uniform, 3.0, 3.0, sigma);
  SUBCASE("center cell is untouched, argmax moves to the center") {
    CHECK(w.at(3, 3, 0) == doctest::Approx(1.0));
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x)
        if (x != 3 || y != 3) CHECK(w.at(x, y, 0) < 1.0);
  }
  SUBCASE("attenuation at distance sigma is exp(-1/2)") {
    const FeatureMap g = gaussian_window(uniform, 3.0, 3.0, 2.0);
    CHECK(g.at(5, 3, 0) == doctest::Approx(std::exp(-0.5)));
  }
  SUBCASE("already centered peak is preserved") {
    std::mt19937_64 rng(9);
    FeatureMap f = testutil::random_map(7, 7, 1, rng, 0.0, 0.5);
    f.at(3, 3, 0) = 2.0;
    const FeatureMap g = gaussian_window(f, 3.0, 3.0, sigma);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x)
        if (x != 3 || y != 3) CHECK(g.at(x, y, 0) < g.at(3, 3, 0));
  }
  SUBCASE("invalid sigma rejected") {
    CHECK_THROWS_AS(gaussian_window(uniform, 3, 3, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("feature map binary roundtrip") {
  std::mt19937_64 rng(17);
  const FeatureMap fm = testutil::random_map(5, 4, 3, rng);
  testutil::TempDir tmp("fmap");
  const std::string path = tmp.str() + "/a.fmap";
  save_feature_map(fm, path);
  const FeatureMap back = load_feature_map(path);
  REQUIRE(back.width == fm.width);
  REQUIRE(back.height == fm.height);
  REQUIRE(back.channels == fm.channels);
  CHECK(back.data == fm.data);
  CHECK_THROWS_AS(load_feature_map(tmp.str() + "/missing.fmap"),
                  std::invalid_argument);
}
