#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace loresmt::subword {

struct VocabTooSmall : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownId : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Word-boundary marker; prepended (fused) to word-initial symbols so that
// detokenization is a pure string operation.
inline constexpr char32_t kBoundaryCp = 0x2581;  // ▁
extern const std::string kBoundary;              // UTF-8 form

enum class Mode { bpe, chars };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

// id <-> token bijection. Reserved tokens occupy the lowest ids in fixed
// order: <unk> <s> </s> <pad> <sep>, then the language/task tags. Reserved
// tokens are atomic and never split by segmentation.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kPad = 3;
  static constexpr int kSep = 4;

  Vocab() = default;
  explicit Vocab(const std::vector<std::string>& tags);

  int add(const std::string& token);           // returns existing id if known
  int id(const std::string& token) const;      // -1 if absent
  const std::string& token(int id) const;      // throws UnknownId
  int size() const { return static_cast<int>(id_to_token_.size()); }
  int reserved_count() const { return n_reserved_; }
  bool is_reserved(int id) const { return id >= 0 && id < n_reserved_; }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  static Vocab from_tokens(const std::vector<std::string>& tokens,
                           int n_reserved);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int n_reserved_ = 0;
};

struct Merge {
  std::string left;
  std::string right;
  bool operator==(const Merge&) const = default;
};

// Trained segmentation model: vocabulary plus (for BPE) the ordered merge
// table. Order defines application priority.
struct Model {
  Mode mode = Mode::bpe;
  Vocab vocab;
  std::vector<Merge> merges;
  std::vector<std::string> tags;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
  std::string to_json_string() const;
  static Model from_json_string(const std::string& s);
};

// Trains a segmentation model. Words are pre-tokenized on whitespace, the
// word-initial symbol carries the boundary marker, and the most frequent
// adjacent pair is merged until the vocabulary size is reached (ties broken
// by lexicographic order of the pair). vocab_size counts reserved + base
// symbols + merges; it is ignored in char mode. Deterministic.
Model train(const std::vector<std::string>& lines, Mode mode, int vocab_size,
            const std::vector<std::string>& tags = {});

// Greedy merge application within each word; reserved tokens pass through
// atomically; unknown base symbols map to <unk>.
std::vector<int> encode(const std::string& text, const Model& model);

// Inverse of encode on in-vocabulary text; boundary markers become spaces.
std::string decode(const std::vector<int>& ids, const Model& model,
                   const std::string& unk_glyph = "<unk>");

// Splits a word into base symbols (boundary marker fused onto the first).
std::vector<std::string> base_symbols(const std::string& word);

// Subword -> char vocabulary transfer for fine-tuning. The char vocabulary is
// built from the single-character symbols of the subword vocabulary plus any
// characters found in `extra_lines`; tokens also present in the subword
// vocabulary map their embedding rows across, the rest are flagged for fresh
// initialization.
struct CharTransfer {
  Model char_model;
  std::vector<std::pair<int, int>> mapped;  // (char vocab id, subword vocab id)
  std::vector<int> fresh;                   // char vocab ids without a source row
};

CharTransfer char_transfer(const Model& subword_model,
                           const std::vector<std::string>& extra_lines = {});

}  // namespace loresmt::subword
