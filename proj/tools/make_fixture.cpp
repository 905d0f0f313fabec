// Trains the small reference model the test suite shares and saves it as a
// model bundle. The recipe is deliberately frozen: tests assert against this
// exact model, so any change here invalidates their expectations.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "nltrack/backends.hpp"
#include "nltrack/synth.hpp"
#include "nltrack/train.hpp"

using namespace nltrack;

int main(int argc, char** argv) {
  if (argc < 2 || argc > 3) {
    std::fprintf(stderr, "usage: make_fixture <out_dir> [epochs]\n");
    return 2;
  }
  const std::string out_dir = argv[1];
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 600;

  ModelConfig cfg;
  // The synthetic targets keep a fixed aspect, so square anchors are the
  // only ones whose regression channels ever receive gradient.
  cfg.anchor_ratios = {1.0};

  std::vector<ScenarioSpec> scens;
  for (std::uint64_t s = 0; s < 12; ++s)
    scens.push_back(make_clean_scenario(s));
  for (std::uint64_t s = 0; s < 4; ++s)
    scens.push_back(make_distractor_scenario(s));

  TripletSetOptions topt;
  topt.per_scenario = 16;
  topt.seed = 11;
  const auto set = make_training_set(scens, cfg, topt);

  std::vector<std::string> sentences;
  for (const auto& t : set)
    if (!t.query.empty()) sentences.push_back(t.query);
  for (const auto& sc : scens) sentences.push_back(nl_description(sc));

  const Model init = make_model(cfg, build_vocabulary(sentences), 41);

  FitOptions opt;
  opt.epochs = epochs;
  opt.learning_rate = 0.05;
  opt.batch_size = 16;
  opt.seed = 13;

  std::printf("make_fixture: %zu triplets, %d epochs\n", set.size(), epochs);
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult res = fit(init, set, opt);
  const auto t1 = std::chrono::steady_clock::now();
  std::printf("make_fixture: loss %.4f -> %.4f in %.0fs\n",
              res.epoch_losses.front(), res.epoch_losses.back(),
              std::chrono::duration<double>(t1 - t0).count());
  if (res.diverged) {
    std::fprintf(stderr, "make_fixture: training diverged\n");
    return 4;
  }
  save_model(res.model, out_dir);
  std::printf("make_fixture: saved to %s\n", out_dir.c_str());
  return 0;
}
