#include "loresmt/g2p.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "loresmt/text.hpp"

namespace loresmt::g2p {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t')) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<ContextItem> parse_context(std::string_view s, int line) {
  std::vector<ContextItem> items;
  for (char32_t cp : utf8_decode(std::string(s))) {
    if (cp == U'#') {
      items.push_back(ContextItem{true, 0});
    } else if (cp == U' ' || cp == U'\t') {
      throw ParseError(line, "whitespace inside context");
    } else {
      items.push_back(ContextItem{false, cp});
    }
  }
  return items;
}

std::vector<char32_t> parse_token(std::string_view s, int line,
                                  const char* what) {
  auto cps = utf8_decode(std::string(s));
  for (char32_t cp : cps)
    if (cp == U' ' || cp == U'\t')
      throw ParseError(line, std::string("whitespace inside ") + what);
  return cps;
}

// Left context is matched backwards, ending just before `pos`.
bool match_left(const std::vector<char32_t>& text, std::size_t pos,
                const std::vector<ContextItem>& ctx) {
  std::size_t p = pos;
  for (auto it = ctx.rbegin(); it != ctx.rend(); ++it) {
    if (it->boundary) {
      if (!(p == 0 || text[p - 1] == U' ')) return false;
    } else {
      if (p == 0 || text[p - 1] != it->cp) return false;
      --p;
    }
  }
  return true;
}

bool match_right(const std::vector<char32_t>& text, std::size_t pos,
                 const std::vector<ContextItem>& ctx) {
  std::size_t p = pos;
  for (const auto& item : ctx) {
    if (item.boundary) {
      if (!(p == text.size() || text[p] == U' ')) return false;
    } else {
      if (p == text.size() || text[p] != item.cp) return false;
      ++p;
    }
  }
  return true;
}

bool match_pattern(const std::vector<char32_t>& text, std::size_t pos,
                   const std::vector<char32_t>& pat) {
  if (pos + pat.size() > text.size()) return false;
  for (std::size_t k = 0; k < pat.size(); ++k)
    if (text[pos + k] != pat[k]) return false;
  return true;
}

}  // namespace

RuleSet compile_rules(std::string_view rule_text) {
  RuleSet rs;
  std::map<std::string, int> seen;  // exact rule text -> first line
  std::istringstream in{std::string(rule_text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("@language", 0) == 0) {
      rs.language = trim(line.substr(9));
      continue;
    }
    if (line.rfind("@preserve_case", 0) == 0) {
      rs.preserve_case = true;
      continue;
    }
    const auto arrow = line.find("->");
    if (arrow == std::string::npos)
      throw ParseError(line_no, "missing '->'");
    std::string lhs = trim(line.substr(0, arrow));
    std::string rhs = trim(line.substr(arrow + 2));
    if (lhs.empty()) throw ParseError(line_no, "empty pattern");

    Rule rule;
    rule.source_line = line_no;
    const auto slash = lhs.find('/');
    std::string pattern_part = lhs;
    if (slash != std::string::npos) {
      pattern_part = trim(lhs.substr(0, slash));
      std::string ctx = lhs.substr(slash + 1);
      const auto underscore = ctx.find('_');
      if (underscore == std::string::npos)
        throw ParseError(line_no, "context without '_'");
      rule.left = parse_context(trim(ctx.substr(0, underscore)), line_no);
      rule.right = parse_context(trim(ctx.substr(underscore + 1)), line_no);
    }
    if (pattern_part.empty()) throw ParseError(line_no, "empty pattern");
    rule.pattern = parse_token(pattern_part, line_no, "pattern");
    rule.replacement = parse_token(rhs, line_no, "replacement");

    std::string key = lhs;
    auto [it, inserted] = seen.emplace(key, line_no);
    if (!inserted) {
      rs.warnings.push_back("duplicate rule for '" + key + "' at line " +
                            std::to_string(line_no) + " (first at line " +
                            std::to_string(it->second) + ")");
    }
    rs.rules.push_back(std::move(rule));
  }
  return rs;
}

RuleSet load_rules(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open rule file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return compile_rules(ss.str());
}

std::string phonemize(std::string_view text, const RuleSet& rules) {
  std::vector<char32_t> cps = utf8_decode(text);
  if (!rules.preserve_case)
    for (auto& c : cps) c = lower_codepoint(c);

  std::vector<char32_t> out;
  out.reserve(cps.size());
  std::size_t i = 0;
  while (i < cps.size()) {
    const Rule* applied = nullptr;
    for (const Rule& r : rules.rules) {
      if (match_pattern(cps, i, r.pattern) && match_left(cps, i, r.left) &&
          match_right(cps, i + r.pattern.size(), r.right)) {
        applied = &r;
        break;
      }
    }
    if (applied) {
      out.insert(out.end(), applied->replacement.begin(),
                 applied->replacement.end());
      i += applied->pattern.size();
    } else {
      out.push_back(cps[i]);
      ++i;
    }
  }
  return utf8_encode(out);
}

}  // namespace loresmt::g2p
