#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace loresmt::g2p {

struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& what)
      : std::runtime_error("rule parse error (line " + std::to_string(line_) +
                           "): " + what),
        line(line_) {}
};

// One context item: a literal codepoint, or a word-boundary assertion.
// Boundaries are zero-width; word edges are the edges of whitespace-delimited
// tokens.
struct ContextItem {
  bool boundary = false;
  char32_t cp = 0;
};

// Context-sensitive rewrite rule `pattern / left _ right -> replacement`.
// Contexts must match but are not consumed.
struct Rule {
  std::vector<char32_t> pattern;      // nonempty
  std::vector<char32_t> replacement;  // may be empty (deletion)
  std::vector<ContextItem> left;
  std::vector<ContextItem> right;
  int source_line = 0;
};

// Ordered ruleset. Rule order is significant: at each position the first
// matching rule in list order is applied.
struct RuleSet {
  std::string language;  // empty = unspecified, compatible with any corpus
  std::vector<Rule> rules;
  bool preserve_case = false;
  std::vector<std::string> warnings;  // e.g. duplicate exact rules
};

// Parses rule text, one rule per line:
//   pattern [/ left _ right] -> replacement
// Lines whose first non-blank character is `#` are comments. `#` inside a
// context stands for a word boundary. A `@language CODE` directive sets the
// ruleset language.
RuleSet compile_rules(std::string_view rule_text);

RuleSet load_rules(const std::string& path);

// Single left-to-right pass. At each position the first rule (in list order)
// whose pattern and contexts match is applied and the cursor advances past
// the consumed pattern; unmatched characters copy through. Input is
// lowercased first unless the ruleset preserves case. Total function.
std::string phonemize(std::string_view text, const RuleSet& rules);

}  // namespace loresmt::g2p
