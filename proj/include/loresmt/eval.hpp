#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace loresmt::eval {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Smoothing { none, add_k };

struct BleuConfig {
  Smoothing smoothing = Smoothing::add_k;
  double k = 1.0;  // added to clipped counts and totals for orders >= 2
};

struct BleuReport {
  double score = 0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  nlohmann::json to_json() const;
};

// Corpus-level BLEU over whitespace tokens, n-gram orders 1..4, with the
// standard brevity penalty. One reference per hypothesis.
BleuReport bleu(const std::vector<std::string>& hyps,
                const std::vector<std::string>& refs,
                const BleuConfig& cfg = {});

struct ChrfConfig {
  int char_order = 6;
  double beta = 2.0;
};

struct ChrfReport {
  double score = 0;  // 0..100
  int char_order = 6;
  double beta = 2.0;

  nlohmann::json to_json() const;
};

// chrF over character n-grams with whitespace removed. Precision and recall
// are macro-averaged over orders per segment, combined with F_beta, and the
// corpus score is the mean segment score.
ChrfReport chrf(const std::vector<std::string>& hyps,
                const std::vector<std::string>& refs,
                const ChrfConfig& cfg = {});

struct MetricReport {
  BleuReport bleu;
  ChrfReport chrf;
  double exact_match = 0;  // fraction of whitespace-normalized exact matches
  std::size_t segments = 0;

  nlohmann::json to_json() const;
};

// Fraction of segments where hypothesis == reference after whitespace
// normalization. The go-to diagnostic on the synthetic benchmark, where the
// mapping is deterministic and a model can plausibly get everything right.
double exact_match(const std::vector<std::string>& hyps,
                   const std::vector<std::string>& refs);

// Both metrics in one pass. When strip_multitask is set, anything from the
// first "<sep>" onward is removed from each hypothesis before scoring, so
// multitask outputs (translation <sep> phonemes) are judged on the
// translation half only. References are expected to be plain.
MetricReport evaluate(const std::vector<std::string>& hyps,
                      const std::vector<std::string>& refs,
                      bool strip_multitask = false,
                      const BleuConfig& bleu_cfg = {},
                      const ChrfConfig& chrf_cfg = {});

}  // namespace loresmt::eval
