#include "loresmt/fixtures.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

#include "loresmt/g2p.hpp"
#include "loresmt/hash.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/text.hpp"

namespace loresmt::fixtures {

using nlohmann::json;

// Sister A: voicing after vowels, initial velar fronting, final vowel shifts.
// Sister B: aspirated stops (digraphs), raised mid vowels, final r deletion.
// Hub g2p: lenition and boundary allophones with multi-byte phoneme symbols.
// Together the three files exercise plain rules, left/right vowel contexts,
// word-boundary contexts on both sides, digraph outputs and deletion.
const char* const kSisterARules =
    "@language sa\n"
    "# voiceless stops voice after vowels; initial k fronts to a digraph\n"
    "k / #_ -> qu\n"
    "k -> g\n"
    "t / _# -> d\n"
    "p / a_a -> b\n"
    "# word-final mid vowels shift\n"
    "o / _# -> ue\n"
    "e / _# -> a\n"
    "# sibilant merger\n"
    "z -> s\n";

const char* const kSisterBRules =
    "@language sb\n"
    "# stops aspirate; mid vowels raise; final r drops\n"
    "k -> ch\n"
    "t -> th\n"
    "p / #_ -> f\n"
    "o -> u\n"
    "e -> i\n"
    "r / _# ->\n";

const char* const kHubG2PRules =
    "@language hb\n"
    "# lenition between low vowels, boundary allophones\n"
    "b / a_a -> \xCE\xB2\n"
    "d / a_a -> \xC3\xB0\n"
    "g / a_a -> \xC9\xA3\n"
    "v -> \xCE\xB2\n"
    "n / _# -> \xC5\x8B\n"
    "s / _# -> \xCA\x83\n"
    "l / _i -> \xCA\x8E\n"
    "k / _i -> c\n";

namespace {

constexpr std::string_view kConsonants = "ptkmnslrbdgfvz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kCodas = "nsr";

std::string make_word(Rng& rng) {
  std::string w;
  for (int s = 0; s < 2; ++s) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  if (rng.real() < 0.2) w += kCodas[rng.below(kCodas.size())];
  return w;
}

std::vector<std::string> make_lexicon(const FixtureSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0x6c6578ull));
  std::vector<std::string> words;
  std::set<std::string> seen;
  long guard = 0;
  while (static_cast<int>(words.size()) < spec.n_words) {
    if (++guard > 1000L * spec.n_words)
      throw std::runtime_error("fixtures: lexicon generation stalled");
    auto w = make_word(rng);
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::string make_sentence(Rng& rng, const std::vector<std::string>& words) {
  const int n = 3 + static_cast<int>(rng.below(3));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += words[rng.below(words.size())];
  }
  return s;
}

// Simulates a lossy back-translation model: one word dropped (or, for very
// short sentences, one duplicated) so the bt source is plausible but wrong.
std::string corrupt(Rng& rng, const std::string& sentence) {
  auto ws = split_words(sentence);
  if (ws.size() >= 4) {
    ws.erase(ws.begin() + static_cast<long>(rng.below(ws.size())));
  } else {
    const std::string w = ws[rng.below(ws.size())];
    const auto at = static_cast<long>(rng.below(ws.size() + 1));
    ws.insert(ws.begin() + at, w);
  }
  return join_words(ws);
}

struct Writer {
  std::filesystem::path root;
  GeneratedFixtures* out;

  void text(const std::string& rel, const std::string& content) const {
    const auto path = root / rel;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f)
      throw std::runtime_error("fixtures: cannot write " + path.string());
    f << content;
    if (!f)
      throw std::runtime_error("fixtures: short write to " + path.string());
    out->file_hashes[rel] = sha256_hex(content);
  }

  void lines(const std::string& rel,
             const std::vector<std::string>& rows) const {
    std::string body;
    for (const auto& r : rows) {
      body += r;
      body += '\n';
    }
    text(rel, body);
  }

  void config(const std::string& rel, const json& j) const {
    text(rel, j.dump(2) + "\n");
  }
};

json corpus_entry(const std::string& name, const std::string& src,
                  const std::string& tgt, const std::string& src_lang,
                  const std::string& tgt_lang) {
  return json{{"name", name},
              {"src", src},
              {"tgt", tgt},
              {"src_lang", src_lang},
              {"tgt_lang", tgt_lang}};
}

json eval_entry(const std::string& name, const std::string& src,
                const std::string& ref, const std::string& tgt_lang) {
  return json{
      {"name", name}, {"src", src}, {"ref", ref}, {"tgt_lang", tgt_lang}};
}

json base_config(const FixtureSpec& spec, const std::string& name) {
  json stage{{"name", "main"},
             {"kind", "pretrain"},
             {"steps", spec.steps},
             {"batch_size", spec.batch_size},
             {"dropout", spec.dropout},
             {"seed", 5},
             {"optim",
              {{"lr_peak", spec.lr_peak},
               {"warmup_steps", spec.warmup_steps}}}};
  json j;
  j["name"] = name;
  j["run_dir"] = "../runs/" + name;
  j["data"] = {{"balance", true}, {"shuffle_seed", 11}};
  j["subword"] = {{"mode", "chars"}, {"vocab_size", 0}};
  j["model"] = {{"preset", "base"}, {"seed", 1}};
  j["train"] = {{"stages", json::array({stage})}};
  j["decode"] = {{"beam", spec.beam},
                 {"lenpen", spec.lenpen},
                 {"nbest", 1},
                 {"max_len", spec.max_len}};
  return j;
}

}  // namespace

GeneratedFixtures generate(const FixtureSpec& spec) {
  if (spec.out_dir.empty())
    throw std::runtime_error("fixtures: out_dir must be set");
  if (spec.n_words < 10)
    throw std::runtime_error("fixtures: lexicon too small to be interesting");

  GeneratedFixtures fx;
  fx.words = make_lexicon(spec);

  // One pool of unique hub sentences, sliced into the splits, so no test
  // sentence ever appears in training data.
  const std::size_t total =
      static_cast<std::size_t>(spec.train_a + spec.train_b + spec.bt_b +
                               2 * spec.dev + 2 * spec.test);
  Rng sent_rng(mix_seed(spec.seed, 0x73656e74ull));
  std::vector<std::string> pool;
  std::unordered_set<std::string> seen;
  long guard = 0;
  while (pool.size() < total) {
    if (++guard > 200L * static_cast<long>(total))
      throw std::runtime_error("fixtures: sentence generation stalled");
    auto s = make_sentence(sent_rng, fx.words);
    if (seen.insert(s).second) pool.push_back(std::move(s));
  }

  std::size_t cursor = 0;
  auto take = [&](int n) {
    std::vector<std::string> slice(pool.begin() + cursor,
                                   pool.begin() + cursor + n);
    cursor += static_cast<std::size_t>(n);
    return slice;
  };
  const auto train_a = take(spec.train_a);
  const auto train_b = take(spec.train_b);
  const auto bt_b = take(spec.bt_b);
  const auto dev_a = take(spec.dev);
  const auto dev_b = take(spec.dev);
  const auto test_a = take(spec.test);
  const auto test_b = take(spec.test);

  const auto rules_a = g2p::compile_rules(kSisterARules);
  const auto rules_b = g2p::compile_rules(kSisterBRules);
  auto translate = [](const std::vector<std::string>& src,
                      const g2p::RuleSet& rules) {
    std::vector<std::string> tgt;
    tgt.reserve(src.size());
    for (const auto& s : src) tgt.push_back(g2p::phonemize(s, rules));
    return tgt;
  };

  Writer w{spec.out_dir, &fx};
  auto emit_pair = [&](const std::string& stem,
                       const std::vector<std::string>& src,
                       const g2p::RuleSet& rules) {
    w.lines("raw/" + stem + ".src", src);
    w.lines("raw/" + stem + ".tgt", translate(src, rules));
  };
  emit_pair("train_a", train_a, rules_a);
  emit_pair("train_b", train_b, rules_b);
  emit_pair("dev_a", dev_a, rules_a);
  emit_pair("dev_b", dev_b, rules_b);
  emit_pair("test_a", test_a, rules_a);
  emit_pair("test_b", test_b, rules_b);

  // bt_b: gold sister-B targets under corrupted hub sources.
  Rng bt_rng(mix_seed(spec.seed, 0x6274ull));
  std::vector<std::string> bt_src;
  bt_src.reserve(bt_b.size());
  for (const auto& s : bt_b) bt_src.push_back(corrupt(bt_rng, s));
  w.lines("raw/bt_b.src", bt_src);
  w.lines("raw/bt_b.tgt", translate(bt_b, rules_b));

  w.text("rules/sister_a.rules", kSisterARules);
  w.text("rules/sister_b.rules", kSisterBRules);
  w.text("rules/g2p_hub.rules", kHubG2PRules);

  // --- experiment configs ---------------------------------------------------

  const auto hub_sa =
      corpus_entry("hub_sa", "../raw/train_a.src", "../raw/train_a.tgt", "hb", "sa");
  const auto hub_sb =
      corpus_entry("hub_sb", "../raw/train_b.src", "../raw/train_b.tgt", "hb", "sb");
  const auto ev_a =
      eval_entry("test_a", "../raw/test_a.src", "../raw/test_a.tgt", "sa");
  const auto ev_b =
      eval_entry("test_b", "../raw/test_b.src", "../raw/test_b.tgt", "sb");

  {
    auto j = base_config(spec, "bilingual_a");
    j["data"]["corpora"] = json::array({hub_sa});
    j["eval"] = json::array({ev_a});
    w.config("experiments/bilingual_a.json", j);
  }
  {
    auto j = base_config(spec, "bilingual_b");
    j["data"]["corpora"] = json::array({hub_sb});
    j["eval"] = json::array({ev_b});
    w.config("experiments/bilingual_b.json", j);
  }
  {
    auto j = base_config(spec, "joint_ab");
    j["data"]["corpora"] = json::array({hub_sa, hub_sb});
    j["eval"] = json::array({ev_a, ev_b});
    w.config("experiments/joint_ab.json", j);
  }
  {
    auto j = base_config(spec, "vertical_a");
    auto entry = hub_sa;
    entry["g2p"] = {{"combination", "vertical"},
                    {"rules", "../rules/g2p_hub.rules"}};
    j["data"]["corpora"] = json::array({entry});
    j["eval"] = json::array({ev_a});
    w.config("experiments/vertical_a.json", j);
  }
  {
    auto j = base_config(spec, "horizontal_a");
    auto entry = hub_sa;
    entry["g2p"] = {{"combination", "horizontal"},
                    {"rules", "../rules/g2p_hub.rules"}};
    j["data"]["corpora"] = json::array({entry});
    auto ev = ev_a;
    ev["strip_multitask"] = true;
    j["eval"] = json::array({ev});
    w.config("experiments/horizontal_a.json", j);
  }
  {
    auto j = base_config(spec, "btmix_b");
    auto entry = hub_sb;
    entry["backtranslation"] = {
        {"src", "../raw/bt_b.src"}, {"tgt", "../raw/bt_b.tgt"}, {"ratio", 0.5}};
    j["data"]["corpora"] = json::array({entry});
    j["eval"] = json::array({ev_b});
    w.config("experiments/btmix_b.json", j);
  }
  {
    // Subword-unit system over direction A whose 20-best lists are re-ranked
    // by the bilingual_a character model (run that config first).
    auto j = base_config(spec, "bpe_a_rescored");
    j["data"]["corpora"] = json::array({hub_sa});
    j["subword"] = {{"mode", "bpe"}, {"vocab_size", spec.bpe_vocab}};
    j["rescore"] = {{"lambda", 1.0},
                    {"nbest", 20},
                    {"model", "../runs/bilingual_a/checkpoint.ckpt"},
                    {"spm", "../runs/bilingual_a/spm.json"}};
    j["eval"] = json::array({ev_a});
    w.config("experiments/bpe_a_rescored.json", j);
  }

  json index;
  index["seed"] = spec.seed;
  index["sizes"] = {{"n_words", spec.n_words}, {"train_a", spec.train_a},
                    {"train_b", spec.train_b}, {"bt_b", spec.bt_b},
                    {"dev", spec.dev},         {"test", spec.test}};
  index["budgets"] = {{"steps", spec.steps},
                      {"batch_size", spec.batch_size},
                      {"warmup_steps", spec.warmup_steps},
                      {"lr_peak", spec.lr_peak},
                      {"dropout", spec.dropout},
                      {"bpe_vocab", spec.bpe_vocab},
                      {"beam", spec.beam},
                      {"lenpen", spec.lenpen},
                      {"max_len", spec.max_len}};
  index["files"] = fx.file_hashes;
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream f(spec.out_dir / "fixtures.json", std::ios::binary);
  if (!f) throw std::runtime_error("fixtures: cannot write fixtures.json");
  f << index.dump(2) << "\n";

  return fx;
}

}  // namespace loresmt::fixtures
