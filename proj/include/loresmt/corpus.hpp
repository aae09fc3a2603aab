#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "loresmt/g2p.hpp"

namespace loresmt::corpus {

struct AlreadyTagged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UntaggedPair : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyCorpus : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DirectionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct G2PLanguageMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SepCollision : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lowercase alphanumerics plus underscore. A phoneme-task code is always
// `<base>_p` for some base code, e.g. `ca_p` for Catalan phonemization.
struct LangCode {
  std::string code;

  LangCode() = default;
  explicit LangCode(std::string c);

  bool is_phoneme_task() const;
  LangCode phoneme_task() const;  // ca -> ca_p
  std::string tag() const { return "<" + code + ">"; }

  bool operator==(const LangCode& o) const { return code == o.code; }
  bool operator!=(const LangCode& o) const { return code != o.code; }
  bool operator<(const LangCode& o) const { return code < o.code; }
};

enum class Origin { parallel, backtranslated, phoneme_task, horizontal_multitask };

std::string origin_name(Origin o);
Origin origin_from_name(const std::string& s);

struct SentencePair {
  std::string source;
  std::string target;
  LangCode src_lang;
  LangCode tgt_lang;
  Origin origin = Origin::parallel;
};

struct ParallelCorpus {
  std::string name;
  std::vector<SentencePair> pairs;
  // Mixed corpora (post-concatenation) may hold several directions/origins.
  bool mixed = false;

  std::size_t size() const { return pairs.size(); }
};

enum class BalancePolicy { as_is, oversample_to_max };

struct MixSpec {
  struct Entry {
    const ParallelCorpus* corpus = nullptr;
    BalancePolicy policy = BalancePolicy::as_is;
  };
  std::vector<Entry> entries;  // at least one
  std::uint64_t shuffle_seed = 0;
};

// --- operations -------------------------------------------------------------

// Prepends `<tgt_lang> ` to the source. Throws AlreadyTagged if the source
// already begins with a recognized tag.
SentencePair tag_source(const SentencePair& pair);

// Tag of the first whitespace-delimited token removed (inverse of tag_source).
std::string untag_source(const std::string& source);

// Concatenation of already-tagged corpora, seeded shuffle, marked mixed.
ParallelCorpus concat_multilingual(const std::vector<ParallelCorpus>& corpora,
                                   std::uint64_t seed);

// Oversamples every corpus to the size of the largest: whole copies plus a
// seeded sample without replacement of the remainder. The largest corpus
// passes through unchanged.
std::vector<ParallelCorpus> balance_oversample(
    const std::vector<ParallelCorpus>& corpora, std::uint64_t seed);

// All parallel pairs plus floor(ratio * |parallel|) backtranslated pairs
// sampled without replacement (capped at |bt|), shuffled. ratio = 0 returns
// the parallel corpus unchanged.
ParallelCorpus mix_backtranslation(const ParallelCorpus& parallel,
                                   const ParallelCorpus& bt, double ratio,
                                   std::uint64_t seed);

// Vertical multi-task combination: appends, for every pair, a pair whose
// source is re-tagged `<src_p>` and whose target is the phonemization of the
// untagged source. Doubles the corpus.
ParallelCorpus make_g2p_vertical(const ParallelCorpus& bitext,
                                 const g2p::RuleSet& rules);

// Horizontal multi-task combination: each target becomes
// `original_target <sep> phonemize(source)`. Size preserved.
ParallelCorpus make_g2p_horizontal(const ParallelCorpus& bitext,
                                   const g2p::RuleSet& rules,
                                   const std::string& sep_token = "<sep>");

// Removes everything from the first occurrence of sep_token onward and trims
// trailing whitespace. Text without the separator is returned unchanged.
std::string strip_phoneme_suffix(const std::string& text,
                                 const std::string& sep_token = "<sep>");

// --- file format ------------------------------------------------------------
// One sentence per line, UTF-8, `.src`/`.tgt` aligned by line number, plus a
// JSON manifest with language codes and provenance. Empty lines are dropped
// at load with a logged count.

void save_corpus(const ParallelCorpus& corpus,
                 const std::filesystem::path& dir, const std::string& stem);

ParallelCorpus load_corpus(const std::filesystem::path& manifest_path);

// Builds a corpus from aligned files without a manifest.
ParallelCorpus load_plain(const std::filesystem::path& src_file,
                          const std::filesystem::path& tgt_file,
                          const std::string& name, const LangCode& src_lang,
                          const LangCode& tgt_lang,
                          Origin origin = Origin::parallel);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path,
                 const std::vector<std::string>& lines);

}  // namespace loresmt::corpus
