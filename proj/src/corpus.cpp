#include "loresmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/text.hpp"

namespace loresmt::corpus {

using nlohmann::json;

LangCode::LangCode(std::string c) : code(std::move(c)) {
  if (!valid_lang_code(code))
    throw std::invalid_argument("invalid language code: '" + code + "'");
}

bool LangCode::is_phoneme_task() const {
  return code.size() > 2 && code.compare(code.size() - 2, 2, "_p") == 0;
}

LangCode LangCode::phoneme_task() const { return LangCode(code + "_p"); }

std::string origin_name(Origin o) {
  switch (o) {
    case Origin::parallel: return "parallel";
    case Origin::backtranslated: return "backtranslated";
    case Origin::phoneme_task: return "phoneme_task";
    case Origin::horizontal_multitask: return "horizontal_multitask";
  }
  return "parallel";
}

Origin origin_from_name(const std::string& s) {
  if (s == "parallel") return Origin::parallel;
  if (s == "backtranslated") return Origin::backtranslated;
  if (s == "phoneme_task") return Origin::phoneme_task;
  if (s == "horizontal_multitask") return Origin::horizontal_multitask;
  throw std::invalid_argument("unknown origin: " + s);
}

SentencePair tag_source(const SentencePair& pair) {
  if (!leading_tag(pair.source).empty())
    throw AlreadyTagged("source already tagged: " + pair.source);
  SentencePair out = pair;
  out.source = pair.tgt_lang.tag() + " " + pair.source;
  return out;
}

std::string untag_source(const std::string& source) {
  return std::string(strip_leading_tag(source));
}

ParallelCorpus concat_multilingual(const std::vector<ParallelCorpus>& corpora,
                                   std::uint64_t seed) {
  ParallelCorpus out;
  out.mixed = true;
  std::string name;
  for (const auto& c : corpora) {
    if (!name.empty()) name += "+";
    name += c.name;
    for (const auto& p : c.pairs) {
      if (leading_tag(p.source).empty())
        throw UntaggedPair("untagged source in corpus '" + c.name +
                           "': " + p.source);
      out.pairs.push_back(p);
    }
  }
  out.name = name;
  Rng rng(mix_seed(seed, 0x636f6e636174ull));  // "concat"
  rng.shuffle(out.pairs);
  return out;
}

std::vector<ParallelCorpus> balance_oversample(
    const std::vector<ParallelCorpus>& corpora, std::uint64_t seed) {
  std::size_t max_size = 0;
  for (const auto& c : corpora) {
    if (c.pairs.empty()) throw EmptyCorpus("empty corpus: " + c.name);
    max_size = std::max(max_size, c.size());
  }
  std::vector<ParallelCorpus> out;
  out.reserve(corpora.size());
  for (std::size_t ci = 0; ci < corpora.size(); ++ci) {
    const auto& c = corpora[ci];
    if (c.size() == max_size) {
      out.push_back(c);
      continue;
    }
    ParallelCorpus up = c;
    up.pairs.clear();
    up.pairs.reserve(max_size);
    const std::size_t copies = max_size / c.size();
    const std::size_t remainder = max_size % c.size();
    for (std::size_t k = 0; k < copies; ++k)
      up.pairs.insert(up.pairs.end(), c.pairs.begin(), c.pairs.end());
    Rng rng(mix_seed(seed, ci + 1));
    for (std::size_t idx : rng.sample_indices(c.size(), remainder))
      up.pairs.push_back(c.pairs[idx]);
    out.push_back(std::move(up));
  }
  return out;
}

ParallelCorpus mix_backtranslation(const ParallelCorpus& parallel,
                                   const ParallelCorpus& bt, double ratio,
                                   std::uint64_t seed) {
  if (ratio < 0) throw std::invalid_argument("negative backtranslation ratio");
  for (const auto* c : {&parallel, &bt})
    for (const auto& p : c->pairs)
      if (leading_tag(p.source).empty())
        throw UntaggedPair("untagged source in corpus '" + c->name + "'");
  if (!parallel.pairs.empty() && !bt.pairs.empty()) {
    const auto& a = parallel.pairs.front();
    const auto& b = bt.pairs.front();
    if (a.src_lang != b.src_lang || a.tgt_lang != b.tgt_lang)
      throw DirectionMismatch("parallel is " + a.src_lang.code + "-" +
                              a.tgt_lang.code + " but bt is " +
                              b.src_lang.code + "-" + b.tgt_lang.code);
  }
  const auto take = std::min<std::size_t>(
      static_cast<std::size_t>(ratio * static_cast<double>(parallel.size())),
      bt.size());
  if (take == 0) return parallel;

  ParallelCorpus out = parallel;
  out.name = parallel.name + "+bt";
  Rng rng(mix_seed(seed, 0x6274ull));  // "bt"
  for (std::size_t idx : rng.sample_indices(bt.size(), take))
    out.pairs.push_back(bt.pairs[idx]);
  rng.shuffle(out.pairs);
  return out;
}

ParallelCorpus make_g2p_vertical(const ParallelCorpus& bitext,
                                 const g2p::RuleSet& rules) {
  ParallelCorpus out = bitext;
  out.name = bitext.name + "+g2p_v";
  out.mixed = true;
  out.pairs.reserve(2 * bitext.size());
  for (const auto& p : bitext.pairs) {
    if (!rules.language.empty() && rules.language != p.src_lang.code)
      throw G2PLanguageMismatch("ruleset is for '" + rules.language +
                                "' but corpus source is '" + p.src_lang.code +
                                "'");
    const std::string body = untag_source(p.source);
    SentencePair ph;
    ph.src_lang = p.src_lang;
    ph.tgt_lang = p.src_lang.phoneme_task();
    ph.origin = Origin::phoneme_task;
    ph.source = ph.tgt_lang.tag() + " " + body;
    ph.target = g2p::phonemize(body, rules);
    out.pairs.push_back(std::move(ph));
  }
  return out;
}

ParallelCorpus make_g2p_horizontal(const ParallelCorpus& bitext,
                                   const g2p::RuleSet& rules,
                                   const std::string& sep_token) {
  ParallelCorpus out = bitext;
  out.name = bitext.name + "+g2p_h";
  for (auto& p : out.pairs) {
    if (!rules.language.empty() && rules.language != p.src_lang.code)
      throw G2PLanguageMismatch("ruleset is for '" + rules.language +
                                "' but corpus source is '" + p.src_lang.code +
                                "'");
    if (p.target.find(sep_token) != std::string::npos)
      throw SepCollision("separator '" + sep_token +
                         "' occurs in target: " + p.target);
    p.target += " " + sep_token + " " + g2p::phonemize(untag_source(p.source), rules);
    p.origin = Origin::horizontal_multitask;
  }
  return out;
}

std::string strip_phoneme_suffix(const std::string& text,
                                 const std::string& sep_token) {
  const auto pos = text.find(sep_token);
  if (pos == std::string::npos) return text;
  std::string out = text.substr(0, pos);
  while (!out.empty() && (out.back() == ' ' || out.back() == '\t'))
    out.pop_back();
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::filesystem::path& path,
                 const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void save_corpus(const ParallelCorpus& corpus,
                 const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> src, tgt;
  src.reserve(corpus.size());
  tgt.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  write_lines(dir / (stem + ".src"), src);
  write_lines(dir / (stem + ".tgt"), tgt);

  json manifest;
  manifest["name"] = corpus.name;
  manifest["src_file"] = stem + ".src";
  manifest["tgt_file"] = stem + ".tgt";
  manifest["mixed"] = corpus.mixed;
  manifest["lines"] = corpus.size();
  if (!corpus.mixed && !corpus.pairs.empty()) {
    manifest["src_lang"] = corpus.pairs.front().src_lang.code;
    manifest["tgt_lang"] = corpus.pairs.front().tgt_lang.code;
    manifest["origin"] = origin_name(corpus.pairs.front().origin);
  } else {
    json meta = json::array();
    for (const auto& p : corpus.pairs)
      meta.push_back({p.src_lang.code, p.tgt_lang.code, origin_name(p.origin)});
    manifest["pair_meta"] = std::move(meta);
  }
  std::ofstream out(dir / (stem + ".json"), std::ios::binary);
  out << manifest.dump(2) << '\n';
}

namespace {

ParallelCorpus from_lines(std::vector<std::string> src,
                          std::vector<std::string> tgt,
                          const std::string& name, const std::string& where) {
  if (src.size() != tgt.size())
    throw std::runtime_error(where + ": source/target line counts differ (" +
                             std::to_string(src.size()) + " vs " +
                             std::to_string(tgt.size()) + ")");
  ParallelCorpus c;
  c.name = name;
  c.pairs.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    c.pairs[i].source = normalize_whitespace(src[i]);
    c.pairs[i].target = normalize_whitespace(tgt[i]);
  }
  return c;
}

// Drops pairs with an empty side, logging the count.
void drop_empty(ParallelCorpus& c) {
  const auto before = c.size();
  std::erase_if(c.pairs, [](const SentencePair& p) {
    return p.source.empty() || p.target.empty();
  });
  if (c.size() != before)
    std::cerr << "[corpus] " << c.name << ": dropped " << (before - c.size())
              << " empty line(s)\n";
}

}  // namespace

ParallelCorpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open manifest: " + manifest_path.string());
  json manifest = json::parse(in);
  const auto dir = manifest_path.parent_path();

  auto src = read_lines(dir / manifest.at("src_file").get<std::string>());
  auto tgt = read_lines(dir / manifest.at("tgt_file").get<std::string>());
  auto c = from_lines(std::move(src), std::move(tgt),
                      manifest.at("name").get<std::string>(),
                      manifest_path.string());
  c.mixed = manifest.value("mixed", false);
  if (manifest.contains("pair_meta")) {
    const auto& meta = manifest.at("pair_meta");
    if (meta.size() != c.size())
      throw std::runtime_error(manifest_path.string() +
                               ": pair_meta length mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) {
      c.pairs[i].src_lang = LangCode(meta[i][0].get<std::string>());
      c.pairs[i].tgt_lang = LangCode(meta[i][1].get<std::string>());
      c.pairs[i].origin = origin_from_name(meta[i][2].get<std::string>());
    }
  } else {
    const LangCode src_lang(manifest.at("src_lang").get<std::string>());
    const LangCode tgt_lang(manifest.at("tgt_lang").get<std::string>());
    const Origin origin = origin_from_name(manifest.value("origin", "parallel"));
    for (auto& p : c.pairs) {
      p.src_lang = src_lang;
      p.tgt_lang = tgt_lang;
      p.origin = origin;
    }
  }
  drop_empty(c);
  return c;
}

ParallelCorpus load_plain(const std::filesystem::path& src_file,
                          const std::filesystem::path& tgt_file,
                          const std::string& name, const LangCode& src_lang,
                          const LangCode& tgt_lang, Origin origin) {
  auto c = from_lines(read_lines(src_file), read_lines(tgt_file), name,
                      src_file.string());
  for (auto& p : c.pairs) {
    p.src_lang = src_lang;
    p.tgt_lang = tgt_lang;
    p.origin = origin;
  }
  drop_empty(c);
  return c;
}

}  // namespace loresmt::corpus
