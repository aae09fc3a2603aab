#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "loresmt/eval.hpp"
#include "loresmt/rng.hpp"

using namespace loresmt;
using eval::BleuConfig;
using eval::ChrfConfig;
using eval::Smoothing;

namespace {

// The reference implementations below recount everything from first
// principles: their own tokenizer, their own n-gram maps, no shared helpers
// with the library. They only speak ASCII, which the randomized corpora
// respect.

std::vector<std::string> oracle_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::map<std::string, std::size_t> oracle_ngrams(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::string, std::size_t> grams;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) key += toks[i + k] + '\x1f';
    ++grams[key];
  }
  return grams;
}

double oracle_bleu(const std::vector<std::string>& hyps,
                   const std::vector<std::string>& refs, bool add_one) {
  std::array<double, 4> matched{}, total{};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = oracle_tokens(hyps[i]);
    const auto r = oracle_tokens(refs[i]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hg = oracle_ngrams(h, n);
      const auto rg = oracle_ngrams(r, n);
      for (const auto& [gram, count] : hg) {
        const auto it = rg.find(gram);
        matched[n - 1] += static_cast<double>(
            std::min(count, it == rg.end() ? std::size_t{0} : it->second));
      }
      if (h.size() >= n) total[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    double num = matched[n - 1], den = total[n - 1];
    if (add_one && n >= 2) {
      num += 1;
      den += 1;
    }
    if (den <= 0 || num <= 0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::string oracle_squeeze(const std::string& s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') out += c;
  return out;
}

double oracle_chrf(const std::vector<std::string>& hyps,
                   const std::vector<std::string>& refs, int order,
                   double beta) {
  const double b2 = beta * beta;
  double sum = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::string h = oracle_squeeze(hyps[i]);
    const std::string r = oracle_squeeze(refs[i]);
    double prec = 0, rec = 0;
    int used = 0;
    for (int n = 1; n <= order; ++n) {
      const std::size_t nn = static_cast<std::size_t>(n);
      const std::size_t ht = h.size() >= nn ? h.size() - nn + 1 : 0;
      const std::size_t rt = r.size() >= nn ? r.size() - nn + 1 : 0;
      if (ht == 0 && rt == 0) continue;
      ++used;
      std::map<std::string, std::size_t> hg, rg;
      for (std::size_t k = 0; k + nn <= h.size(); ++k) ++hg[h.substr(k, nn)];
      for (std::size_t k = 0; k + nn <= r.size(); ++k) ++rg[r.substr(k, nn)];
      double match = 0;
      for (const auto& [gram, count] : hg) {
        const auto it = rg.find(gram);
        if (it != rg.end())
          match += static_cast<double>(std::min(count, it->second));
      }
      if (ht > 0) prec += match / static_cast<double>(ht);
      if (rt > 0) rec += match / static_cast<double>(rt);
    }
    if (used == 0) {
      sum += 1.0;
      continue;
    }
    const double p = prec / used, rr = rec / used;
    const double denom = b2 * p + rr;
    sum += denom > 0 ? (1 + b2) * p * rr / denom : 0.0;
  }
  return 100.0 * sum / static_cast<double>(hyps.size());
}

}  // namespace

TEST_CASE("identity scores perfectly") {
  const std::vector<std::string> lines = {"the cat sat", "on the mat",
                                          "a b c d e f g h"};
  const auto b = eval::bleu(lines, lines);
  CHECK(b.score == 100.0);
  CHECK(b.brevity_penalty == 1.0);
  for (double p : b.precisions) CHECK(p == 1.0);
  CHECK(b.hyp_len == 14);
  CHECK(b.ref_len == 14);

  const auto c = eval::chrf(lines, lines);
  CHECK(c.score == 100.0);
  CHECK(eval::exact_match(lines, lines) == 1.0);
}

TEST_CASE("clipping caps repeated-word credit") {
  // p1 = 2/7 ('the' appears twice in the reference), p2..p4 smoothed to
  // 1/7, 1/6, 1/5; BP = 1 since the hypothesis is longer.
  const std::vector<std::string> hyp = {"the the the the the the the"};
  const std::vector<std::string> ref = {"the cat is on the mat"};
  const auto rep = eval::bleu(hyp, ref);
  CHECK(rep.precisions[0] == 2.0 / 7.0);
  CHECK(rep.precisions[1] == 1.0 / 7.0);
  CHECK(rep.precisions[2] == 1.0 / 6.0);
  CHECK(rep.precisions[3] == 1.0 / 5.0);
  CHECK(rep.brevity_penalty == 1.0);
  CHECK(rep.score == doctest::Approx(19.205612637498934).epsilon(1e-12));

  // Without smoothing the zero 2-gram precision floors the score.
  const auto hard = eval::bleu(hyp, ref, {Smoothing::none, 0.0});
  CHECK(hard.score == 0.0);
  CHECK(hard.precisions[1] == 0.0);
}

TEST_CASE("brevity penalty bites exactly when the hypothesis is short") {
  // All precisions are 1 (matched or fully smoothed), so the score is the
  // penalty alone: exp(1 - 4/2) = e^-1.
  const auto rep = eval::bleu({"a b"}, {"a b c d"});
  CHECK(rep.brevity_penalty == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(rep.score == doctest::Approx(36.787944117144235).epsilon(1e-12));

  // Equal or longer hypothesis: no penalty.
  CHECK(eval::bleu({"a b c d e"}, {"a b c d"}).brevity_penalty == 1.0);
}

TEST_CASE("empty hypotheses score zero, not NaN") {
  const auto rep = eval::bleu({""}, {"a b"});
  CHECK(rep.score == 0.0);
  CHECK(rep.brevity_penalty == 0.0);
  CHECK(rep.hyp_len == 0);
  const auto c = eval::chrf({""}, {"ab"});
  CHECK(c.score == 0.0);
  // Both sides empty is a (vacuous) perfect match per segment.
  CHECK(eval::chrf({"", "ab"}, {"", "ab"}).score == 100.0);
}

TEST_CASE("chrf hand computation") {
  // hyp "ab" vs ref "abc": P = (1 + 1 + 0-less)/2... worked through:
  // orders 1..3 in play, prec = (1 + 1)/3, rec = (2/3 + 1/2 + 0)/3,
  // F2 = 5pr/(4p+r) = 14/33.
  const auto rep = eval::chrf({"ab"}, {"abc"});
  CHECK(rep.score == doctest::Approx(1400.0 / 33.0).epsilon(1e-12));
  CHECK(rep.char_order == 6);
  CHECK(rep.beta == 2.0);

  // Whitespace is invisible to chrF.
  CHECK(eval::chrf({"a b"}, {"ab"}).score == 100.0);
  CHECK(eval::chrf({"\ta  b "}, {"ab"}).score == 100.0);
}

TEST_CASE("metrics reject misaligned input") {
  CHECK_THROWS_AS(eval::bleu({"a"}, {"a", "b"}), eval::EvalError);
  CHECK_THROWS_AS(eval::bleu({}, {}), eval::EvalError);
  CHECK_THROWS_AS(eval::chrf({"a"}, {}), eval::EvalError);
  CHECK_THROWS_AS(eval::exact_match({}, {}), eval::EvalError);
  CHECK_THROWS_AS(eval::chrf({"a"}, {"a"}, {0, 2.0}), eval::EvalError);
}

TEST_CASE("exact match normalizes whitespace only") {
  CHECK(eval::exact_match({" a  b "}, {"a b"}) == 1.0);
  CHECK(eval::exact_match({"a b", "x"}, {"a b", "y"}) == 0.5);
  CHECK(eval::exact_match({"A"}, {"a"}) == 0.0);  // case matters
}

TEST_CASE("evaluate strips multitask suffixes before scoring") {
  const std::vector<std::string> hyps = {"coco <sep> kak", "plain"};
  const std::vector<std::string> refs = {"coco", "plain"};
  const auto plain = eval::evaluate(hyps, refs);
  CHECK(plain.exact_match == 0.5);
  const auto stripped = eval::evaluate(hyps, refs, /*strip_multitask=*/true);
  CHECK(stripped.exact_match == 1.0);
  CHECK(stripped.bleu.score == 100.0);
  CHECK(stripped.segments == 2);

  const auto j = stripped.to_json();
  CHECK(j.at("bleu").at("score").get<double>() == 100.0);
  CHECK(j.at("exact_match").get<double>() == 1.0);
}

TEST_CASE("randomized corpora match the brute-force oracle to 1e-9") {
  // Every corpus shape up to 5 segments x 10 tokens, with a tiny vocabulary
  // so clipping, total misses and empty segments all occur.
  const std::vector<std::string> vocab = {"a", "b", "c", "ab", "ba"};
  Rng rng(41);
  int worst_checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n_seg = 1 + rng.below(5);
    std::vector<std::string> hyps, refs;
    for (std::size_t s = 0; s < n_seg; ++s) {
      auto gen = [&] {
        std::string line;
        const std::size_t n_tok = rng.below(11);  // 0..10
        for (std::size_t t = 0; t < n_tok; ++t) {
          if (t) line += ' ';
          line += vocab[rng.below(vocab.size())];
        }
        return line;
      };
      hyps.push_back(gen());
      refs.push_back(gen());
    }

    const double b_smooth = eval::bleu(hyps, refs).score;
    const double b_hard = eval::bleu(hyps, refs, {Smoothing::none, 0.0}).score;
    const double c_default = eval::chrf(hyps, refs).score;
    const double c_short = eval::chrf(hyps, refs, {3, 1.0}).score;

    const double ob_smooth = oracle_bleu(hyps, refs, true);
    const double ob_hard = oracle_bleu(hyps, refs, false);
    const double oc_default = oracle_chrf(hyps, refs, 6, 2.0);
    const double oc_short = oracle_chrf(hyps, refs, 3, 1.0);

    CAPTURE(trial);
    CAPTURE(hyps[0]);
    CAPTURE(refs[0]);
    REQUIRE(std::abs(b_smooth - ob_smooth) <= 1e-9);
    REQUIRE(std::abs(b_hard - ob_hard) <= 1e-9);
    REQUIRE(std::abs(c_default - oc_default) <= 1e-9);
    REQUIRE(std::abs(c_short - oc_short) <= 1e-9);
    ++worst_checked;
  }
  CHECK(worst_checked == 400);
}
