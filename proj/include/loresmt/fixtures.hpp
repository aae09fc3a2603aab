#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace loresmt::fixtures {

// Synthetic benchmark: a "hub" language with a closed CV-syllable lexicon and
// two sister languages derived from it by deterministic orthographic rewrite
// rules (applied with the g2p engine, so the rule files double as g2p
// fixtures). Directions: hub -> sister A (resourced) and hub -> sister B
// (low-resource), plus a noisy synthetic back-translated corpus for B.
//
// The default sizes and budgets are what the acceptance suite trains against;
// tests that only need the layout can shrink every knob.
struct FixtureSpec {
  std::filesystem::path out_dir;
  std::uint64_t seed = 17;

  // corpus sizes (sentences)
  int n_words = 80;
  int train_a = 5000;
  int train_b = 1200;
  int bt_b = 600;
  int dev = 60;    // per direction
  int test = 200;  // per direction

  // budgets written into the generated experiment configs
  int steps = 5000;
  int batch_size = 8;
  int warmup_steps = 200;
  double lr_peak = 3e-3;
  double dropout = 0.1;
  int bpe_vocab = 120;
  int beam = 4;
  double lenpen = 1.0;
  int max_len = 96;
};

// Rewrite / g2p rule files, also written to <out_dir>/rules/.
extern const char* const kSisterARules;
extern const char* const kSisterBRules;
extern const char* const kHubG2PRules;

struct GeneratedFixtures {
  std::vector<std::string> words;                  // hub lexicon
  std::map<std::string, std::string> file_hashes;  // relative path -> sha256
};

// Writes raw corpora, rule files, experiment configs and an index
// (fixtures.json) under spec.out_dir. Fully determined by the spec.
GeneratedFixtures generate(const FixtureSpec& spec);

}  // namespace loresmt::fixtures
