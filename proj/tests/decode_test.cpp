#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "loresmt/corpus.hpp"
#include "loresmt/decode.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/subword.hpp"
#include "loresmt/transformer.hpp"

using namespace loresmt;
using decode::BeamConfig;
using decode::Hypothesis;
using decode::NBestEntry;
using decode::SearchSpace;

namespace {

// Deterministic prefix-dependent distribution over a 4-token vocabulary:
// token history is hashed, the hash seeds per-token scores, and the scores
// are log-softmaxed. Copyable, so the beam can fork it.
struct TableStepper {
  std::vector<int> hist;

  std::vector<double> step(int token) {
    hist.push_back(token);
    std::uint64_t h = 1469598103934665603ull;
    for (int t : hist) {
      h ^= static_cast<std::uint64_t>(t) + 0x9e3779b9ull;
      h *= 1099511628211ull;
    }
    std::vector<double> lp(4);
    double mx = -1e300;
    for (int v = 0; v < 4; ++v) {
      lp[static_cast<std::size_t>(v)] =
          static_cast<double>(split_mix(h + static_cast<std::uint64_t>(v)) %
                              997) /
          199.0;
      mx = std::max(mx, lp[static_cast<std::size_t>(v)]);
    }
    double sum = 0;
    for (double x : lp) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    for (double& x : lp) x -= lse;
    return lp;
  }
};

// All complete hypotheses (interior tokens followed by eos, up to max_len
// tokens total), each scored from scratch by replaying the stepper along its
// own path. No beam bookkeeping anywhere.
template <class Stepper, class ScoreFn>
std::vector<Hypothesis> enumerate_oracle(const std::vector<int>& alphabet,
                                         int max_len, double lenpen, int eos,
                                         ScoreFn&& score) {
  std::vector<Hypothesis> all;
  std::vector<int> interior;
  auto emit = [&] {
    Hypothesis h;
    h.tokens = interior;
    h.tokens.push_back(eos);
    h.raw = score(h.tokens);
    h.norm = decode::length_normalize(h.raw, h.tokens.size(), lenpen);
    h.capped = static_cast<int>(h.tokens.size()) == max_len;
    all.push_back(std::move(h));
  };
  auto rec = [&](auto&& self, int remaining) -> void {
    emit();
    if (remaining == 0) return;
    for (int tok : alphabet) {
      interior.push_back(tok);
      self(self, remaining - 1);
      interior.pop_back();
    }
  };
  rec(rec, max_len - 1);
  std::sort(all.begin(), all.end(), decode::ranks_before);
  return all;
}

double replay_score(const std::vector<int>& tokens, int bos) {
  TableStepper st;
  auto lp = st.step(bos);
  double raw = 0;
  for (int tok : tokens) {
    raw += lp[static_cast<std::size_t>(tok)];
    lp = st.step(tok);
  }
  return raw;
}

model::ModelConfig micro_cfg(int vocab) {
  model::ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.ffn_dim = 16;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.max_positions = 32;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("length normalization") {
  CHECK(decode::length_normalize(-6.0, 3, 1.0) == -2.0);
  CHECK(decode::length_normalize(-6.0, 3, 0.0) == -6.0);
  CHECK(decode::length_normalize(-6.0, 4, 0.5) == -3.0);
  CHECK_THROWS_AS(decode::length_normalize(-1.0, 0, 1.0), decode::ZeroLength);
}

TEST_CASE("ranking prefers higher norm, then lexicographic tokens") {
  Hypothesis a{{0, 2}, -2, -1.0, false};
  Hypothesis b{{3, 2}, -4, -2.0, false};
  CHECK(decode::ranks_before(a, b));
  CHECK_FALSE(decode::ranks_before(b, a));
  Hypothesis c{{0, 3, 2}, -3, -1.0, false};  // tie with a on norm
  CHECK(decode::ranks_before(a, c));         // {0,2} < {0,3,2}
  Hypothesis d{{0, 2}, -2, -1.0, false};
  CHECK_FALSE(decode::ranks_before(a, d));   // full tie: strict weak order
  CHECK_FALSE(decode::ranks_before(d, a));
}

TEST_CASE("exhaustive beam equals brute-force enumeration") {
  SearchSpace space;
  space.vocab_size = 4;
  space.bos_id = 1;
  space.eos_id = 2;
  const std::vector<int> alphabet = {0, 3};  // bos banned, eos terminal
  const int max_len = 3;

  // 1 + 2 + 4 = 7 complete hypotheses in total.
  for (double lenpen : {0.0, 0.5, 1.0}) {
    const auto oracle = enumerate_oracle<TableStepper>(
        alphabet, max_len, lenpen, space.eos_id,
        [&](const std::vector<int>& toks) {
          return replay_score(toks, space.bos_id);
        });
    REQUIRE(oracle.size() == 7);

    BeamConfig bc;
    bc.beam_size = 64;  // exhaustive: never truncates at this scale
    bc.lenpen = lenpen;
    bc.nbest = 7;
    bc.max_len = max_len;
    const auto got = decode::beam_search(TableStepper{}, space, bc);

    CAPTURE(lenpen);
    REQUIRE(got.size() == oracle.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].tokens == oracle[i].tokens);
      CHECK(got[i].raw == doctest::Approx(oracle[i].raw).epsilon(1e-12));
      CHECK(got[i].norm == doctest::Approx(oracle[i].norm).epsilon(1e-12));
      CHECK(got[i].capped == oracle[i].capped);
      CHECK(got[i].tokens.back() == space.eos_id);
    }
  }

  // The operating-point cell (beam 8, lenpen 1.0) is also exhaustive here:
  // at most 4 prefixes are ever alive, so nothing is truncated.
  BeamConfig op;
  op.beam_size = 8;
  op.lenpen = 1.0;
  op.nbest = 7;
  op.max_len = max_len;
  const auto oracle = enumerate_oracle<TableStepper>(
      alphabet, max_len, 1.0, space.eos_id, [&](const std::vector<int>& toks) {
        return replay_score(toks, space.bos_id);
      });
  const auto got = decode::beam_search(TableStepper{}, space, op);
  REQUIRE(got.size() == 7);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i].tokens == oracle[i].tokens);
}

TEST_CASE("pruning never changes the result set") {
  SearchSpace space;
  space.vocab_size = 4;
  space.bos_id = 1;
  space.eos_id = 2;
  for (int beam : {1, 2, 4, 16}) {
    for (double lenpen : {0.0, 1.0}) {
      BeamConfig on, off;
      on.beam_size = off.beam_size = beam;
      on.lenpen = off.lenpen = lenpen;
      on.nbest = off.nbest = std::min(beam, 3);
      on.max_len = off.max_len = 4;
      on.prune = true;
      off.prune = false;
      const auto a = decode::beam_search(TableStepper{}, space, on);
      const auto b = decode::beam_search(TableStepper{}, space, off);
      CAPTURE(beam);
      CAPTURE(lenpen);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].norm == b[i].norm);
      }
    }
  }
}

TEST_CASE("model-backed beam matches teacher-forced enumeration") {
  const auto cfg = micro_cfg(6);
  const auto params = model::init_model<double>(cfg);
  const std::vector<int> src = {5, 0, 4, 2};
  const std::vector<int> alphabet = {0, 4, 5};  // pad 3 banned, bos 1, eos 2
  const int max_len = 3;

  for (double lenpen : {0.0, 0.5, 1.0}) {
    // 1 + 3 + 9 = 13 hypotheses, each scored by the teacher-forcing path.
    const auto oracle = enumerate_oracle<int>(
        alphabet, max_len, lenpen, cfg.eos_id,
        [&](const std::vector<int>& toks) {
          return model::score_hypothesis(params, cfg,
                                         std::span<const int>(src),
                                         std::span<const int>(toks));
        });
    REQUIRE(oracle.size() == 13);

    BeamConfig bc;
    bc.beam_size = 64;
    bc.lenpen = lenpen;
    bc.nbest = 13;
    bc.max_len = max_len;
    for (bool kv : {false, true}) {
      bc.use_kv_cache = kv;
      const auto got =
          decode::decode_ids(params, cfg, std::span<const int>(src), bc);
      CAPTURE(lenpen);
      CAPTURE(kv);
      REQUIRE(got.size() == oracle.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].tokens == oracle[i].tokens);
        CHECK(got[i].raw == doctest::Approx(oracle[i].raw).epsilon(1e-9));
        CHECK(got[i].norm == doctest::Approx(oracle[i].norm).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("cached and full-forward steppers agree at practical beam sizes") {
  const auto cfg = micro_cfg(9);
  const auto params = model::init_model<double>(cfg);
  const std::vector<int> src = {6, 7, 8, 2};

  BeamConfig bc;
  bc.beam_size = 4;
  bc.nbest = 4;
  bc.max_len = 12;
  bc.use_kv_cache = true;
  const auto cached = decode::decode_ids(params, cfg, std::span<const int>(src), bc);
  bc.use_kv_cache = false;
  const auto full = decode::decode_ids(params, cfg, std::span<const int>(src), bc);

  REQUIRE(cached.size() == full.size());
  for (std::size_t i = 0; i < cached.size(); ++i) {
    CHECK(cached[i].tokens == full[i].tokens);
    CHECK(cached[i].norm == doctest::Approx(full[i].norm).epsilon(1e-9));
    CHECK(cached[i].tokens.back() == cfg.eos_id);
    // pad and bos never appear
    for (int t : cached[i].tokens) {
      CHECK(t != cfg.pad_id);
      CHECK(t != cfg.bos_id);
    }
    CHECK(cached[i].capped == (static_cast<int>(cached[i].tokens.size()) ==
                               bc.max_len));
  }
  // Results come back ranked.
  for (std::size_t i = 1; i < cached.size(); ++i)
    CHECK_FALSE(decode::ranks_before(cached[i], cached[i - 1]));
}

TEST_CASE("search input validation") {
  SearchSpace space;
  space.vocab_size = 4;
  space.bos_id = 1;
  space.eos_id = 2;
  BeamConfig bc;

  SearchSpace no_vocab = space;
  no_vocab.vocab_size = 0;
  CHECK_THROWS_AS(decode::beam_search(TableStepper{}, no_vocab, bc),
                  decode::SearchError);

  SearchSpace eos_banned = space;
  eos_banned.banned = {2};
  CHECK_THROWS_AS(decode::beam_search(TableStepper{}, eos_banned, bc),
                  decode::SearchError);

  SearchSpace out_of_range = space;
  out_of_range.banned = {9};
  CHECK_THROWS_AS(decode::beam_search(TableStepper{}, out_of_range, bc),
                  decode::SearchError);

  BeamConfig bad = bc;
  bad.beam_size = 0;
  CHECK_THROWS_AS(decode::beam_search(TableStepper{}, space, bad),
                  decode::SearchError);
  bad = bc;
  bad.lenpen = -0.5;
  CHECK_THROWS_AS(decode::beam_search(TableStepper{}, space, bad),
                  decode::SearchError);

  // A stepper whose distribution is the wrong size is caught immediately.
  struct BadStepper {
    std::vector<double> step(int) { return {0.0, 0.0}; }
  };
  CHECK_THROWS_AS(decode::beam_search(BadStepper{}, space, bc),
                  decode::SearchError);

  const auto j = bc.to_json();
  const auto back = BeamConfig::from_json(j);
  CHECK(back.to_json() == j);
}

TEST_CASE("n-best files round-trip exactly") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "decode_nbest_test";
  fs::create_directories(dir);
  const auto path = dir / "x.nbest";

  std::vector<NBestEntry> entries;
  entries.push_back({0, "bon dia", -3.25, -1.0833333333333333});
  entries.push_back({0, "bona nit", -4.5, -1.5});
  entries.push_back({2, "text with | single pipes", -0.1, -0.05});
  entries.push_back({7, "", -1e-300, -0.0});
  decode::save_nbest(path, entries);

  const auto back = decode::load_nbest(path);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(back[i].id == entries[i].id);
    CHECK(back[i].text == entries[i].text);
    CHECK(back[i].raw == entries[i].raw);    // shortest round-trip format
    CHECK(back[i].norm == entries[i].norm);
  }

  std::vector<NBestEntry> bad;
  bad.push_back({0, "oops ||| embedded", -1, -1});
  CHECK_THROWS_AS(decode::save_nbest(dir / "bad.nbest", bad),
                  decode::NBestParseError);

  corpus::write_lines(dir / "short.nbest", {"0 ||| text ||| -1"});
  CHECK_THROWS_AS(decode::load_nbest(dir / "short.nbest"),
                  decode::NBestParseError);
  corpus::write_lines(dir / "badid.nbest", {"x7 ||| text ||| -1 ||| -1"});
  CHECK_THROWS_AS(decode::load_nbest(dir / "badid.nbest"),
                  decode::NBestParseError);
  corpus::write_lines(dir / "badscore.nbest", {"0 ||| text ||| -1z ||| -1"});
  CHECK_THROWS_AS(decode::load_nbest(dir / "badscore.nbest"),
                  decode::NBestParseError);
  // Blank lines are tolerated.
  corpus::write_lines(dir / "gaps.nbest", {"", "0 ||| a ||| -1 ||| -1", ""});
  CHECK(decode::load_nbest(dir / "gaps.nbest").size() == 1);
  CHECK_THROWS_AS(decode::load_nbest(dir / "absent.nbest"),
                  decode::NBestParseError);

  fs::remove_all(dir);
}

TEST_CASE("rescoring with lambda 0 is the identity permutation") {
  const std::vector<std::string> lines = {"ab ba", "aa bb", "ab ab"};
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<double>(cfg);

  // Sorted by norm descending, with a tie in the middle — exactly what the
  // decoder emits.
  std::vector<NBestEntry> group;
  group.push_back({3, "ab ba", -1.0, -0.5});
  group.push_back({3, "aa bb", -2.0, -0.75});
  group.push_back({3, "ab ab", -2.5, -0.75});
  group.push_back({3, "ba", -3.0, -1.5});

  const auto out = decode::rescore_group(group, "ab aa", params, cfg, spm,
                                         /*lambda=*/0.0, /*lenpen=*/1.0);
  REQUIRE(out.size() == group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    CHECK(out[i].text == group[i].text);
    CHECK(out[i].raw == group[i].raw);
    CHECK(out[i].norm == group[i].norm);
  }
}

TEST_CASE("rescoring with lambda 1 ranks by the char-model score") {
  const std::vector<std::string> lines = {"ab ba", "aa bb", "ab ab", "ba aa"};
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<double>(cfg);
  const std::string src = "ba ab";
  const double lenpen = 1.0;

  std::vector<NBestEntry> group;
  group.push_back({0, "ab ba", -4.0, -0.9});  // decoder norms are decoys here
  group.push_back({0, "aa bb", -4.0, -1.0});
  group.push_back({0, "ab ab", -4.0, -1.1});
  group.push_back({0, "ba aa", -4.0, -1.2});

  // Independent ranking: teacher-forced char-model score of each hypothesis.
  std::vector<int> src_ids = subword::encode(src, spm);
  src_ids.push_back(subword::Vocab::kEos);
  std::vector<std::pair<double, std::string>> want;
  for (const auto& e : group) {
    std::vector<int> ids = subword::encode(e.text, spm);
    ids.push_back(subword::Vocab::kEos);
    const double raw = model::score_hypothesis(params, cfg,
                                               std::span<const int>(src_ids),
                                               std::span<const int>(ids));
    want.emplace_back(decode::length_normalize(raw, ids.size(), lenpen),
                      e.text);
  }
  std::stable_sort(want.begin(), want.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  const auto out =
      decode::rescore_group(group, src, params, cfg, spm, 1.0, lenpen);
  REQUIRE(out.size() == group.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].text == want[i].second);
    CHECK(out[i].norm == doctest::Approx(want[i].first).epsilon(1e-12));
  }
}

TEST_CASE("20-best lists survive rescoring intact") {
  std::vector<std::string> lines;
  std::vector<NBestEntry> group;
  const std::string syll[4] = {"ba", "be", "bi", "bo"};
  for (int i = 0; i < 20; ++i) {
    const std::string text = syll[i % 4] + " " + syll[(i / 4) % 4] +
                             (i >= 16 ? " ba" : "");
    lines.push_back(text);
    group.push_back({5, text, -1.0 - i, -1.0 - i});
  }
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<double>(cfg);

  for (double lambda : {0.0, 0.5, 1.0}) {
    const auto out =
        decode::rescore_group(group, "ba be", params, cfg, spm, lambda, 1.0);
    CAPTURE(lambda);
    REQUIRE(out.size() == 20);  // no entry lost
    auto texts_in = lines;
    std::vector<std::string> texts_out;
    for (const auto& e : out) texts_out.push_back(e.text);
    std::sort(texts_in.begin(), texts_in.end());
    std::sort(texts_out.begin(), texts_out.end());
    CHECK(texts_in == texts_out);
  }
}

TEST_CASE("hypotheses outside the char vocabulary are dropped, not scored") {
  const std::vector<std::string> lines = {"ab ba"};
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<double>(cfg);

  std::vector<NBestEntry> group;
  group.push_back({0, "zz zz", -1.0, -0.5});  // z is unrepresentable
  group.push_back({0, "ab", -2.0, -1.0});
  const auto out = decode::rescore_group(group, "ab", params, cfg, spm, 1.0, 1.0);
  REQUIRE(out.size() == 1);
  CHECK(out[0].text == "ab");

  // If every hypothesis is unrepresentable the group passes through unchanged.
  std::vector<NBestEntry> all_oov;
  all_oov.push_back({0, "zz", -1.0, -0.5});
  all_oov.push_back({0, "qq", -2.0, -1.0});
  const auto kept = decode::rescore_group(all_oov, "ab", params, cfg, spm, 1.0, 1.0);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].text == "zz");
  CHECK(kept[0].norm == -0.5);
  CHECK(kept[1].text == "qq");
}

TEST_CASE("grid search scores every cell and picks the documented best") {
  const std::vector<std::string> lines = {"ba be bi", "bo ba", "be bo ba bi"};
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<float>(cfg);

  const std::vector<std::string> sources = {"ba be", "bo bi"};
  const std::vector<std::string> refs = {"ba be", "bo ba"};
  BeamConfig base;
  base.max_len = 8;

  const auto res = decode::grid_search(params, cfg, spm, sources, refs,
                                       {1, 2}, {0.6, 1.0}, base);
  REQUIRE(res.points.size() == 4);
  // Cells appear in grid order.
  CHECK(res.points[0].beam == 1);
  CHECK(res.points[0].lenpen == 0.6);
  CHECK(res.points[3].beam == 2);
  CHECK(res.points[3].lenpen == 1.0);

  // Recompute the winner from the published points with the documented rule:
  // max BLEU, ties to the smaller beam, then the smaller exponent.
  decode::GridPoint want = res.points[0];
  for (const auto& p : res.points) {
    if (p.bleu > want.bleu ||
        (p.bleu == want.bleu &&
         (p.beam < want.beam ||
          (p.beam == want.beam && p.lenpen < want.lenpen))))
      want = p;
  }
  CHECK(res.best.beam == want.beam);
  CHECK(res.best.lenpen == want.lenpen);
  CHECK(res.best.bleu == want.bleu);

  CHECK_THROWS_AS(decode::grid_search(params, cfg, spm, sources, refs, {},
                                      {1.0}, base),
                  decode::SearchError);
}

TEST_CASE("translate_lines fills n-best segment ids") {
  const std::vector<std::string> lines = {"ba be", "bi bo"};
  const auto spm = subword::train(lines, subword::Mode::chars, 0);
  const auto cfg = micro_cfg(spm.vocab.size());
  const auto params = model::init_model<float>(cfg);

  BeamConfig bc;
  bc.beam_size = 2;
  bc.nbest = 2;
  bc.max_len = 6;
  const auto results = decode::translate_lines(params, cfg, spm, lines, bc);
  REQUIRE(results.size() == 2);
  for (std::size_t i = 0; i < results.size(); ++i) {
    REQUIRE(!results[i].nbest.empty());
    CHECK(results[i].text == results[i].nbest.front().text);
    for (const auto& e : results[i].nbest) CHECK(e.id == i);
    for (const auto& h : results[i].hyps)
      CHECK(h.tokens.back() == subword::Vocab::kEos);
  }
}
