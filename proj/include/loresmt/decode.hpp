#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "loresmt/eval.hpp"
#include "loresmt/subword.hpp"
#include "loresmt/transformer.hpp"

namespace loresmt::decode {

struct ZeroLength : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SearchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NBestParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// score / length^exponent; length counts generated tokens including eos.
inline double length_normalize(double raw, std::size_t length,
                               double exponent) {
  if (length == 0) throw ZeroLength("cannot normalize a zero-length hypothesis");
  return raw / std::pow(static_cast<double>(length), exponent);
}

struct BeamConfig {
  int beam_size = 8;
  double lenpen = 1.0;  // length-normalization exponent
  int nbest = 1;
  int max_len = 64;  // generated tokens including eos
  bool prune = true;  // bound-based pruning against the finished pool
  bool use_kv_cache = true;

  void validate() const {
    if (beam_size < 1) throw SearchError("beam_size must be >= 1");
    if (nbest < 1) throw SearchError("nbest must be >= 1");
    if (max_len < 1) throw SearchError("max_len must be >= 1");
    if (lenpen < 0) throw SearchError("lenpen must be >= 0");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"beam_size", beam_size}, {"lenpen", lenpen},
                          {"nbest", nbest},         {"max_len", max_len},
                          {"prune", prune},         {"use_kv_cache", use_kv_cache}};
  }
  static BeamConfig from_json(const nlohmann::json& j) {
    BeamConfig c;
    c.beam_size = j.value("beam_size", c.beam_size);
    c.lenpen = j.value("lenpen", c.lenpen);
    c.nbest = j.value("nbest", c.nbest);
    c.max_len = j.value("max_len", c.max_len);
    c.prune = j.value("prune", c.prune);
    c.use_kv_cache = j.value("use_kv_cache", c.use_kv_cache);
    c.validate();
    return c;
  }
};

struct Hypothesis {
  std::vector<int> tokens;  // generated ids including eos, excluding bos
  double raw = 0;           // sum of token log-probabilities
  double norm = 0;          // raw / len^lenpen
  bool capped = false;      // finished at the length cap
};

struct SearchSpace {
  int vocab_size = 0;
  int bos_id = 1;
  int eos_id = 2;
  std::vector<int> banned;  // ids never proposed (pad etc.; bos is implicit)
};

// Ranking shared by the search and by exhaustive reference enumerations:
// higher normalized score first, ties broken toward the lexicographically
// smaller token sequence.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.norm != b.norm) return a.norm > b.norm;
  return a.tokens < b.tokens;
}

// Beam search over a Stepper: a copyable scoring state whose step(token)
// feeds one target token (bos first) and returns the next-token
// log-probability distribution as vector<double>.
//
// Hypotheses hold at most max_len tokens including eos, so at the final step
// only eos is proposed; everything the search returns is a complete
// hypothesis, flagged `capped` when it finished at the cap. Pruning discards
// a prefix only when its score bound (raw / max_len^lenpen, the best it could
// still reach) falls strictly below the current nbest-th finished score, so
// enabling it never changes the result set.
template <class Stepper>
std::vector<Hypothesis> beam_search(const Stepper& init,
                                    const SearchSpace& space,
                                    const BeamConfig& cfg) {
  cfg.validate();
  if (space.vocab_size <= 0) throw SearchError("vocab_size must be positive");
  if (space.eos_id < 0 || space.eos_id >= space.vocab_size)
    throw SearchError("eos_id out of range");

  std::vector<char> banned(static_cast<std::size_t>(space.vocab_size), 0);
  for (int b : space.banned) {
    if (b < 0 || b >= space.vocab_size) throw SearchError("banned id out of range");
    banned[static_cast<std::size_t>(b)] = 1;
  }
  if (space.bos_id >= 0 && space.bos_id < space.vocab_size)
    banned[static_cast<std::size_t>(space.bos_id)] = 1;
  if (banned[static_cast<std::size_t>(space.eos_id)])
    throw SearchError("eos cannot be banned");

  struct Item {
    Stepper st;
    std::vector<int> toks;
    double raw = 0;
    std::vector<double> lp;  // log P(next token | prefix)
  };
  std::vector<Item> beam;
  {
    Item root{init, {}, 0.0, {}};
    root.lp = root.st.step(space.bos_id);
    if (static_cast<int>(root.lp.size()) != space.vocab_size)
      throw SearchError("stepper distribution size != vocab_size");
    beam.push_back(std::move(root));
  }

  std::vector<Hypothesis> finished;
  // nbest-th best finished normalized score, for pruning
  auto kth_finished = [&]() {
    std::vector<double> norms;
    norms.reserve(finished.size());
    for (const auto& h : finished) norms.push_back(h.norm);
    std::nth_element(norms.begin(),
                     norms.begin() + (cfg.nbest - 1), norms.end(),
                     std::greater<double>());
    return norms[static_cast<std::size_t>(cfg.nbest - 1)];
  };

  for (int step = 1; step <= cfg.max_len && !beam.empty(); ++step) {
    const bool horizon = step == cfg.max_len;

    struct Cand {
      std::size_t parent;
      int tok;
      double raw;
    };
    std::vector<Cand> alive;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      const Item& it = beam[i];
      Hypothesis h;
      h.tokens = it.toks;
      h.tokens.push_back(space.eos_id);
      h.raw = it.raw + it.lp[static_cast<std::size_t>(space.eos_id)];
      h.norm = length_normalize(h.raw, h.tokens.size(), cfg.lenpen);
      h.capped = horizon;
      finished.push_back(std::move(h));
      if (horizon) continue;
      for (int tok = 0; tok < space.vocab_size; ++tok) {
        if (tok == space.eos_id || banned[static_cast<std::size_t>(tok)])
          continue;
        alive.push_back({i, tok, it.raw + it.lp[static_cast<std::size_t>(tok)]});
      }
    }
    if (alive.empty()) break;

    // higher raw first; equal-score candidates ordered by the sequence they
    // would form, lexicographically on token ids
    auto cand_ranks_before = [&](const Cand& a, const Cand& b) {
      if (a.raw != b.raw) return a.raw > b.raw;
      const auto& ta = beam[a.parent].toks;
      const auto& tb = beam[b.parent].toks;
      const std::size_t m = std::min(ta.size(), tb.size());
      for (std::size_t k = 0; k < m; ++k)
        if (ta[k] != tb[k]) return ta[k] < tb[k];
      if (ta.size() != tb.size()) return ta.size() < tb.size();
      return a.tok < b.tok;
    };
    std::sort(alive.begin(), alive.end(), cand_ranks_before);
    if (static_cast<int>(alive.size()) > cfg.beam_size)
      alive.resize(static_cast<std::size_t>(cfg.beam_size));

    if (cfg.prune && static_cast<int>(finished.size()) >= cfg.nbest) {
      const double kth = kth_finished();
      std::erase_if(alive, [&](const Cand& cand) {
        const double bound = length_normalize(
            cand.raw, static_cast<std::size_t>(cfg.max_len), cfg.lenpen);
        return bound < kth;
      });
    }

    std::vector<Item> next;
    next.reserve(alive.size());
    for (const Cand& cand : alive) {
      // fork the parent's scoring state
      Item n{beam[cand.parent].st, beam[cand.parent].toks, cand.raw, {}};
      n.toks.push_back(cand.tok);
      n.lp = n.st.step(cand.tok);
      next.push_back(std::move(n));
    }
    beam = std::move(next);
  }

  if (finished.empty())
    throw SearchError("search produced no finished hypothesis");
  std::sort(finished.begin(), finished.end(), ranks_before);
  if (static_cast<int>(finished.size()) > cfg.nbest)
    finished.resize(static_cast<std::size_t>(cfg.nbest));
  return finished;
}

// --- model-backed steppers ---------------------------------------------------

namespace detail {

template <class S>
std::vector<double> log_softmax_last_row(const model::Mat<S>& logits) {
  const Eigen::Index r = logits.rows() - 1;
  const Eigen::Index V = logits.cols();
  double max_v = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < V; ++j)
    max_v = std::max(max_v, static_cast<double>(logits(r, j)));
  double sum = 0;
  for (Eigen::Index j = 0; j < V; ++j)
    sum += std::exp(static_cast<double>(logits(r, j)) - max_v);
  const double lse = max_v + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(V));
  for (Eigen::Index j = 0; j < V; ++j)
    out[static_cast<std::size_t>(j)] = static_cast<double>(logits(r, j)) - lse;
  return out;
}

}  // namespace detail

// Re-runs the full forward for every step. Slow but free of incremental
// state; the reference path for search tests.
template <class S>
class FullForwardStepper {
 public:
  FullForwardStepper(const model::Params<S>& params,
                     const model::ModelConfig& cfg, std::span<const int> src,
                     const model::SrcMask* mask = nullptr)
      : params_(&params), cfg_(&cfg), src_(src.begin(), src.end()) {
    if (mask) mask_ = *mask;
  }

  std::vector<double> step(int token) {
    input_.push_back(token);
    model::Mat<S> logits = model::forward(
        *params_, *cfg_, std::span<const int>(src_),
        std::span<const int>(input_), mask_.empty() ? nullptr : &mask_);
    return detail::log_softmax_last_row(logits);
  }

 private:
  const model::Params<S>* params_ = nullptr;
  const model::ModelConfig* cfg_ = nullptr;
  std::vector<int> src_;
  model::SrcMask mask_;
  std::vector<int> input_;
};

// Incremental stepper over the per-layer K/V cache.
template <class S>
class CachedStepper {
 public:
  CachedStepper(const model::Params<S>& params, const model::ModelConfig& cfg,
                std::span<const int> src, const model::SrcMask* mask = nullptr)
      : sess_(params, cfg, src, mask) {}

  std::vector<double> step(int token) {
    model::Mat<S> logits = sess_.step(token);
    return detail::log_softmax_last_row(logits);
  }

 private:
  model::DecodeSession<S> sess_;
};

// Beam search over the model for one already-encoded source line.
template <class S>
std::vector<Hypothesis> decode_ids(const model::Params<S>& params,
                                   const model::ModelConfig& cfg,
                                   std::span<const int> src_ids,
                                   const BeamConfig& bc) {
  SearchSpace space;
  space.vocab_size = cfg.vocab_size;
  space.bos_id = cfg.bos_id;
  space.eos_id = cfg.eos_id;
  space.banned = {cfg.pad_id};
  if (bc.use_kv_cache)
    return beam_search(CachedStepper<S>(params, cfg, src_ids), space, bc);
  return beam_search(FullForwardStepper<S>(params, cfg, src_ids), space, bc);
}

// --- n-best lists -------------------------------------------------------------

struct NBestEntry {
  std::size_t id = 0;  // source segment index
  std::string text;    // detokenized hypothesis
  double raw = 0;
  double norm = 0;
};

// `id ||| text ||| raw ||| norm`, one entry per line, shortest round-trip
// float formatting.
void save_nbest(const std::filesystem::path& path,
                const std::vector<NBestEntry>& entries);
std::vector<NBestEntry> load_nbest(const std::filesystem::path& path);

std::string format_score(double v);
double parse_score(const std::string& s);

// --- text-level decoding -------------------------------------------------------

struct TranslationResult {
  std::string text;  // best hypothesis
  std::vector<Hypothesis> hyps;
  std::vector<NBestEntry> nbest;  // detokenized, ids filled by the caller
};

// Segments a (tagged) source line, decodes it, and detokenizes the n-best.
template <class S>
TranslationResult translate_line(const model::Params<S>& params,
                                 const model::ModelConfig& cfg,
                                 const subword::Model& spm,
                                 const std::string& line,
                                 const BeamConfig& bc) {
  std::vector<int> ids = subword::encode(line, spm);
  ids.push_back(subword::Vocab::kEos);
  TranslationResult res;
  res.hyps = decode_ids(params, cfg, std::span<const int>(ids), bc);
  for (const Hypothesis& h : res.hyps) {
    std::vector<int> content(h.tokens.begin(), h.tokens.end() - 1);  // drop eos
    NBestEntry e;
    e.text = subword::decode(content, spm);
    e.raw = h.raw;
    e.norm = h.norm;
    res.nbest.push_back(std::move(e));
  }
  res.text = res.nbest.empty() ? std::string() : res.nbest.front().text;
  return res;
}

template <class S>
std::vector<TranslationResult> translate_lines(
    const model::Params<S>& params, const model::ModelConfig& cfg,
    const subword::Model& spm, const std::vector<std::string>& lines,
    const BeamConfig& bc) {
  std::vector<TranslationResult> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out.push_back(translate_line(params, cfg, spm, lines[i], bc));
    for (auto& e : out.back().nbest) e.id = i;
  }
  return out;
}

// --- n-best rescoring ----------------------------------------------------------

// Interpolates the decoder's normalized score with a character-level model's
// length-normalized score of the same text:
//   combined = (1 - lambda) * norm + lambda * char_norm.
// The sort is stable, so lambda = 0 reproduces the incoming order exactly.
// Hypotheses the character vocabulary cannot represent are dropped with a
// warning (unless that would empty the group, in which case the group is
// returned unchanged).
template <class S>
std::vector<NBestEntry> rescore_group(std::vector<NBestEntry> group,
                                      const std::string& src_line,
                                      const model::Params<S>& char_params,
                                      const model::ModelConfig& char_cfg,
                                      const subword::Model& char_spm,
                                      double lambda, double lenpen) {
  std::vector<int> src_ids = subword::encode(src_line, char_spm);
  src_ids.push_back(subword::Vocab::kEos);

  std::vector<NBestEntry> kept;
  kept.reserve(group.size());
  for (auto& e : group) {
    std::vector<int> ids = subword::encode(e.text, char_spm);
    if (std::find(ids.begin(), ids.end(), subword::Vocab::kUnk) != ids.end()) {
      std::cerr << "rescore: dropping hypothesis with out-of-vocabulary "
                   "characters (segment "
                << e.id << ")\n";
      continue;
    }
    ids.push_back(subword::Vocab::kEos);
    const double char_raw = model::score_hypothesis(
        char_params, char_cfg, std::span<const int>(src_ids),
        std::span<const int>(ids));
    const double char_norm = length_normalize(char_raw, ids.size(), lenpen);
    e.norm = (1.0 - lambda) * e.norm + lambda * char_norm;
    kept.push_back(std::move(e));
  }
  if (kept.empty()) return group;
  std::stable_sort(kept.begin(), kept.end(),
                   [](const NBestEntry& a, const NBestEntry& b) {
                     return a.norm > b.norm;
                   });
  return kept;
}

// --- grid search ---------------------------------------------------------------

struct GridPoint {
  int beam = 0;
  double lenpen = 0;
  double bleu = 0;
  double chrf = 0;
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> points;
};

// Decodes a held-out set for every (beam, lenpen) combination and picks the
// highest BLEU; exact ties go to the smaller beam, then the smaller exponent.
template <class S>
GridResult grid_search(const model::Params<S>& params,
                       const model::ModelConfig& cfg,
                       const subword::Model& spm,
                       const std::vector<std::string>& sources,
                       const std::vector<std::string>& references,
                       const std::vector<int>& beams,
                       const std::vector<double>& lenpens,
                       const BeamConfig& base, bool strip_multitask = false) {
  if (beams.empty() || lenpens.empty())
    throw SearchError("grid search needs at least one beam and one exponent");
  GridResult res;
  bool have_best = false;
  for (int b : beams) {
    for (double n : lenpens) {
      BeamConfig bc = base;
      bc.beam_size = b;
      bc.lenpen = n;
      bc.nbest = 1;
      bc.validate();
      std::vector<std::string> hyps;
      hyps.reserve(sources.size());
      for (const auto& line : sources)
        hyps.push_back(translate_line(params, cfg, spm, line, bc).text);
      const auto rep = eval::evaluate(hyps, references, strip_multitask);
      GridPoint p{b, n, rep.bleu.score, rep.chrf.score};
      res.points.push_back(p);
      const bool better =
          !have_best || p.bleu > res.best.bleu ||
          (p.bleu == res.best.bleu &&
           (p.beam < res.best.beam ||
            (p.beam == res.best.beam && p.lenpen < res.best.lenpen)));
      if (better) {
        res.best = p;
        have_best = true;
      }
    }
  }
  return res;
}

}  // namespace loresmt::decode
