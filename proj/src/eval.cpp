#include "loresmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "loresmt/corpus.hpp"
#include "loresmt/text.hpp"

namespace loresmt::eval {

namespace {

// Word n-grams as joined token slices; the map is a multiset with counts.
using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts word_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i,
                                      tokens.begin() + i + n)];
  return counts;
}

std::size_t clipped_overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t total = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(count, it->second);
  }
  return total;
}

using CharNgramCounts = std::map<std::u32string, std::size_t>;

CharNgramCounts char_ngrams(const std::u32string& chars, std::size_t n) {
  CharNgramCounts counts;
  if (chars.size() < n) return counts;
  for (std::size_t i = 0; i + n <= chars.size(); ++i)
    ++counts[chars.substr(i, n)];
  return counts;
}

std::size_t clipped_overlap(const CharNgramCounts& hyp,
                            const CharNgramCounts& ref) {
  std::size_t total = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(count, it->second);
  }
  return total;
}

// Segment characters with whitespace removed, as codepoints.
std::u32string squeezed_chars(const std::string& line) {
  std::u32string out;
  for (char32_t cp : utf8_decode(line))
    if (cp != U' ' && cp != U'\t' && cp != U'\n' && cp != U'\r') out += cp;
  return out;
}

void check_aligned(const std::vector<std::string>& hyps,
                   const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size())
    throw EvalError("hypothesis/reference count mismatch: " +
                    std::to_string(hyps.size()) + " vs " +
                    std::to_string(refs.size()));
  if (hyps.empty()) throw EvalError("nothing to evaluate");
}

}  // namespace

nlohmann::json BleuReport::to_json() const {
  return nlohmann::json{{"score", score},
                        {"precisions", precisions},
                        {"brevity_penalty", brevity_penalty},
                        {"hyp_len", hyp_len},
                        {"ref_len", ref_len}};
}

BleuReport bleu(const std::vector<std::string>& hyps,
                const std::vector<std::string>& refs, const BleuConfig& cfg) {
  check_aligned(hyps, refs);

  BleuReport rep;
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto hyp_tokens = split_words(hyps[i]);
    const auto ref_tokens = split_words(refs[i]);
    rep.hyp_len += hyp_tokens.size();
    rep.ref_len += ref_tokens.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp_grams = word_ngrams(hyp_tokens, n);
      const auto ref_grams = word_ngrams(ref_tokens, n);
      matched[n - 1] += clipped_overlap(hyp_grams, ref_grams);
      total[n - 1] +=
          hyp_tokens.size() >= n ? hyp_tokens.size() - n + 1 : 0;
    }
  }

  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 1; n <= 4; ++n) {
    double num = static_cast<double>(matched[n - 1]);
    double den = static_cast<double>(total[n - 1]);
    if (cfg.smoothing == Smoothing::add_k && n >= 2) {
      num += cfg.k;
      den += cfg.k;
    }
    const double p = den > 0 ? num / den : 0.0;
    rep.precisions[n - 1] = p;
    if (p > 0)
      log_sum += std::log(p);
    else
      zero = true;
  }

  rep.brevity_penalty =
      rep.hyp_len == 0
          ? 0.0
          : std::exp(std::min(0.0, 1.0 - static_cast<double>(rep.ref_len) /
                                            static_cast<double>(rep.hyp_len)));
  rep.score = (zero || rep.hyp_len == 0)
                  ? 0.0
                  : 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

nlohmann::json ChrfReport::to_json() const {
  return nlohmann::json{
      {"score", score}, {"char_order", char_order}, {"beta", beta}};
}

ChrfReport chrf(const std::vector<std::string>& hyps,
                const std::vector<std::string>& refs, const ChrfConfig& cfg) {
  check_aligned(hyps, refs);
  if (cfg.char_order < 1) throw EvalError("chrf char_order must be >= 1");

  const double b2 = cfg.beta * cfg.beta;
  double segment_sum = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::u32string hyp = squeezed_chars(hyps[i]);
    const std::u32string ref = squeezed_chars(refs[i]);

    double prec_sum = 0, rec_sum = 0;
    int used_orders = 0;
    for (int n = 1; n <= cfg.char_order; ++n) {
      const auto hyp_grams = char_ngrams(hyp, static_cast<std::size_t>(n));
      const auto ref_grams = char_ngrams(ref, static_cast<std::size_t>(n));
      const std::size_t hyp_total =
          hyp.size() >= static_cast<std::size_t>(n)
              ? hyp.size() - static_cast<std::size_t>(n) + 1
              : 0;
      const std::size_t ref_total =
          ref.size() >= static_cast<std::size_t>(n)
              ? ref.size() - static_cast<std::size_t>(n) + 1
              : 0;
      // orders that neither side reaches say nothing about this segment
      if (hyp_total == 0 && ref_total == 0) continue;
      ++used_orders;
      const std::size_t match = clipped_overlap(hyp_grams, ref_grams);
      if (hyp_total > 0)
        prec_sum += static_cast<double>(match) / static_cast<double>(hyp_total);
      if (ref_total > 0)
        rec_sum += static_cast<double>(match) / static_cast<double>(ref_total);
    }
    if (used_orders == 0) {
      // both segments empty after whitespace removal: a perfect match
      segment_sum += 1.0;
      continue;
    }
    const double p = prec_sum / used_orders;
    const double r = rec_sum / used_orders;
    const double denom = b2 * p + r;
    segment_sum += denom > 0 ? (1 + b2) * p * r / denom : 0.0;
  }

  ChrfReport rep;
  rep.char_order = cfg.char_order;
  rep.beta = cfg.beta;
  rep.score = 100.0 * segment_sum / static_cast<double>(hyps.size());
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  return nlohmann::json{{"bleu", bleu.to_json()},
                        {"chrf", chrf.to_json()},
                        {"exact_match", exact_match},
                        {"segments", segments}};
}

double exact_match(const std::vector<std::string>& hyps,
                   const std::vector<std::string>& refs) {
  check_aligned(hyps, refs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    if (normalize_whitespace(hyps[i]) == normalize_whitespace(refs[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(hyps.size());
}

MetricReport evaluate(const std::vector<std::string>& hyps,
                      const std::vector<std::string>& refs,
                      bool strip_multitask, const BleuConfig& bleu_cfg,
                      const ChrfConfig& chrf_cfg) {
  const std::vector<std::string>* scored = &hyps;
  std::vector<std::string> stripped;
  if (strip_multitask) {
    stripped.reserve(hyps.size());
    for (const auto& h : hyps)
      stripped.push_back(corpus::strip_phoneme_suffix(h));
    scored = &stripped;
  }
  MetricReport rep;
  rep.bleu = bleu(*scored, refs, bleu_cfg);
  rep.chrf = chrf(*scored, refs, chrf_cfg);
  rep.exact_match = exact_match(*scored, refs);
  rep.segments = hyps.size();
  return rep;
}

}  // namespace loresmt::eval
