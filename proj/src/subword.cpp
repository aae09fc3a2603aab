#include "loresmt/subword.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "loresmt/text.hpp"

namespace loresmt::subword {

using nlohmann::json;

const std::string kBoundary = [] {
  std::string s;
  utf8_append(s, kBoundaryCp);
  return s;
}();

std::string mode_name(Mode m) { return m == Mode::bpe ? "bpe" : "char"; }

Mode mode_from_name(const std::string& s) {
  if (s == "bpe") return Mode::bpe;
  if (s == "char") return Mode::chars;
  throw std::invalid_argument("unknown segmenter mode: " + s);
}

Vocab::Vocab(const std::vector<std::string>& tags) {
  for (const char* t : {"<unk>", "<s>", "</s>", "<pad>", "<sep>"}) add(t);
  std::vector<std::string> sorted_tags = tags;
  std::sort(sorted_tags.begin(), sorted_tags.end());
  sorted_tags.erase(std::unique(sorted_tags.begin(), sorted_tags.end()),
                    sorted_tags.end());
  for (const auto& t : sorted_tags) add(t);
  n_reserved_ = size();
}

int Vocab::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = size();
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw UnknownId("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens,
                         int n_reserved) {
  Vocab v;
  for (const auto& t : tokens) v.add(t);
  v.n_reserved_ = n_reserved;
  return v;
}

std::vector<std::string> base_symbols(const std::string& word) {
  std::vector<std::string> syms;
  const auto cps = utf8_decode(word);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    std::string s;
    if (i == 0) s = kBoundary;
    utf8_append(s, cps[i]);
    syms.push_back(std::move(s));
  }
  return syms;
}

namespace {

bool is_reserved_word(const std::string& word, const Vocab& vocab) {
  const int id = vocab.id(word);
  return id >= 0 && vocab.is_reserved(id);
}

using Pair = std::pair<std::string, std::string>;

struct WordEntry {
  std::vector<std::string> syms;
  std::int64_t count = 0;
};

}  // namespace

Model train(const std::vector<std::string>& lines, Mode mode, int vocab_size,
            const std::vector<std::string>& tags) {
  Model model;
  model.mode = mode;
  model.tags = tags;
  model.vocab = Vocab(tags);

  // Word frequencies, reserved tokens excluded (they are atomic).
  std::map<std::string, std::int64_t> word_freq;
  bool any = false;
  for (const auto& line : lines) {
    for (const auto& w : split_words(normalize_whitespace(line))) {
      any = true;
      if (is_reserved_word(w, model.vocab)) continue;
      ++word_freq[w];
    }
  }
  if (!any) throw std::invalid_argument("empty training corpus");

  // Base alphabet, sorted for a deterministic id layout.
  std::set<std::string> base;
  for (const auto& [w, n] : word_freq)
    for (auto& s : base_symbols(w)) base.insert(std::move(s));
  for (const auto& s : base) model.vocab.add(s);

  if (mode == Mode::chars) return model;

  const int n_merges =
      vocab_size - model.vocab.reserved_count() - static_cast<int>(base.size());
  if (n_merges < 0)
    throw VocabTooSmall(
        "vocab_size " + std::to_string(vocab_size) + " is below reserved (" +
        std::to_string(model.vocab.reserved_count()) + ") + base symbols (" +
        std::to_string(base.size()) + ")");

  std::vector<WordEntry> words;
  words.reserve(word_freq.size());
  for (const auto& [w, n] : word_freq)
    words.push_back(WordEntry{base_symbols(w), n});

  // Adjacent-pair counts with the word indices they occur in.
  std::map<Pair, std::int64_t> pair_count;
  std::map<Pair, std::set<std::size_t>> pair_words;
  auto add_word_pairs = [&](std::size_t wi, std::int64_t sign) {
    const auto& syms = words[wi].syms;
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      Pair p{syms[k], syms[k + 1]};
      auto& c = pair_count[p];
      c += sign * words[wi].count;
      if (c <= 0) {
        pair_count.erase(p);
        pair_words[p].erase(wi);
        if (pair_words[p].empty()) pair_words.erase(p);
      } else if (sign > 0) {
        pair_words[p].insert(wi);
      }
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) add_word_pairs(wi, +1);

  for (int m = 0; m < n_merges && !pair_count.empty(); ++m) {
    // Most frequent pair; ties by lexicographic order of the pair. pair_count
    // is an ordered map, so the first maximum seen is the lexicographic least.
    Pair best;
    std::int64_t best_count = -1;
    for (const auto& [p, c] : pair_count) {
      if (c > best_count) {
        best = p;
        best_count = c;
      }
    }

    const std::string merged = best.first + best.second;
    model.merges.push_back(Merge{best.first, best.second});
    model.vocab.add(merged);

    const auto affected = pair_words[best];  // copy: mutation invalidates
    for (std::size_t wi : affected) {
      add_word_pairs(wi, -1);
      auto& syms = words[wi].syms;
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t k = 0; k < syms.size(); ++k) {
        if (k + 1 < syms.size() && syms[k] == best.first &&
            syms[k + 1] == best.second) {
          next.push_back(merged);
          ++k;
        } else {
          next.push_back(syms[k]);
        }
      }
      syms = std::move(next);
      add_word_pairs(wi, +1);
    }
  }
  return model;
}

namespace {

// Greedy merge application: repeatedly apply the highest-priority merge
// present anywhere in the symbol sequence, left to right.
void apply_merges(std::vector<std::string>& syms,
                  const std::map<Pair, int>& ranks) {
  while (syms.size() > 1) {
    int best_rank = INT_MAX;
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      auto it = ranks.find(Pair{syms[k], syms[k + 1]});
      if (it != ranks.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == INT_MAX) return;
    std::vector<std::string> next;
    next.reserve(syms.size());
    for (std::size_t k = 0; k < syms.size(); ++k) {
      if (k + 1 < syms.size()) {
        auto it = ranks.find(Pair{syms[k], syms[k + 1]});
        if (it != ranks.end() && it->second == best_rank) {
          next.push_back(syms[k] + syms[k + 1]);
          ++k;
          continue;
        }
      }
      next.push_back(syms[k]);
    }
    syms = std::move(next);
  }
}

}  // namespace

std::vector<int> encode(const std::string& text, const Model& model) {
  std::map<Pair, int> ranks;
  for (std::size_t i = 0; i < model.merges.size(); ++i)
    ranks.emplace(Pair{model.merges[i].left, model.merges[i].right},
                  static_cast<int>(i));

  std::vector<int> ids;
  for (const auto& w : split_words(normalize_whitespace(text))) {
    if (is_reserved_word(w, model.vocab)) {
      ids.push_back(model.vocab.id(w));
      continue;
    }
    auto syms = base_symbols(w);
    if (model.mode == Mode::bpe) apply_merges(syms, ranks);
    for (const auto& s : syms) {
      const int id = model.vocab.id(s);
      ids.push_back(id >= 0 ? id : Vocab::kUnk);
    }
  }
  return ids;
}

std::string decode(const std::vector<int>& ids, const Model& model,
                   const std::string& unk_glyph) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = model.vocab.token(id);  // throws UnknownId
    std::string piece;
    bool word_start = false;
    if (id == Vocab::kUnk) {
      piece = unk_glyph;
      word_start = true;
    } else if (model.vocab.is_reserved(id)) {
      piece = tok;
      word_start = true;
    } else if (starts_with(tok, kBoundary)) {
      piece = tok.substr(kBoundary.size());
      word_start = true;
    } else {
      piece = tok;
    }
    if (word_start && !out.empty()) out.push_back(' ');
    out += piece;
  }
  return out;
}

CharTransfer char_transfer(const Model& subword_model,
                           const std::vector<std::string>& extra_lines) {
  CharTransfer out;
  out.char_model.mode = Mode::chars;
  out.char_model.tags = subword_model.tags;
  out.char_model.vocab = Vocab(subword_model.tags);

  // Single-character symbols of the subword vocabulary (one codepoint after
  // stripping the boundary marker). Multi-character subwords are dropped.
  std::set<std::string> chars;
  for (int id = subword_model.vocab.reserved_count();
       id < subword_model.vocab.size(); ++id) {
    const std::string& tok = subword_model.vocab.token(id);
    std::string content = tok;
    if (starts_with(content, kBoundary)) content = content.substr(kBoundary.size());
    if (utf8_length(content) == 1) chars.insert(tok);
  }
  for (const auto& line : extra_lines)
    for (const auto& w : split_words(normalize_whitespace(line))) {
      if (is_reserved_word(w, out.char_model.vocab)) continue;
      for (auto& s : base_symbols(w)) chars.insert(std::move(s));
    }
  for (const auto& s : chars) out.char_model.vocab.add(s);

  for (int cid = 0; cid < out.char_model.vocab.size(); ++cid) {
    const int sid = subword_model.vocab.id(out.char_model.vocab.token(cid));
    if (sid >= 0)
      out.mapped.emplace_back(cid, sid);
    else
      out.fresh.push_back(cid);
  }
  return out;
}

std::string Model::to_json_string() const {
  json j;
  j["format"] = "loresmt-spm";
  j["version"] = 1;
  j["mode"] = mode_name(mode);
  j["tags"] = tags;
  j["vocab"] = vocab.tokens();
  json ms = json::array();
  for (const auto& m : merges) ms.push_back({m.left, m.right});
  j["merges"] = std::move(ms);
  j["reserved"] = vocab.reserved_count();
  return j.dump(2) + "\n";
}

Model Model::from_json_string(const std::string& s) {
  json j = json::parse(s);
  Model m;
  m.mode = mode_from_name(j.at("mode").get<std::string>());
  m.tags = j.at("tags").get<std::vector<std::string>>();
  m.vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>(),
                               j.at("reserved").get<int>());
  for (const auto& pair : j.at("merges"))
    m.merges.push_back(Merge{pair[0].get<std::string>(), pair[1].get<std::string>()});
  return m;
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << to_json_string();
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)),
                std::istreambuf_iterator<char>());
  return from_json_string(s);
}

}  // namespace loresmt::subword
