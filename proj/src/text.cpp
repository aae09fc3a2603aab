#include "loresmt/text.hpp"

namespace loresmt {

std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
    }
    if (len > 1) {
      if (i + len <= n) {
        char32_t acc = b0 & (0x7F >> len);
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
          const unsigned char bk = static_cast<unsigned char>(s[i + k]);
          if ((bk & 0xC0) != 0x80) {
            ok = false;
            break;
          }
          acc = (acc << 6) | (bk & 0x3F);
        }
        // reject overlong encodings and surrogates
        static constexpr char32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (ok && acc >= kMin[len] && acc <= 0x10FFFF &&
            !(acc >= 0xD800 && acc <= 0xDFFF)) {
          cp = acc;
        } else {
          len = 1;
        }
      } else {
        len = 1;
      }
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) utf8_append(out, cp);
  return out;
}

std::size_t utf8_length(std::string_view s) { return utf8_decode(s).size(); }

namespace {
inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}
}  // namespace

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

char32_t lower_codepoint(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 0x20;
  // Latin-1 supplement: À..Þ except ×
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  // Latin Extended-A: upper/lower pairs alternate
  if (c >= 0x100 && c <= 0x177 && (c % 2 == 0)) return c + 1;
  if (c >= 0x179 && c <= 0x17D && (c % 2 == 1)) return c + 1;
  return c;
}

std::string lower_text(std::string_view s) {
  auto cps = utf8_decode(s);
  for (auto& c : cps) c = lower_codepoint(c);
  return utf8_encode(cps);
}

namespace {
inline bool tag_body_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}
}  // namespace

std::string leading_tag(std::string_view source) {
  if (source.empty() || source[0] != '<') return {};
  std::size_t i = 1;
  while (i < source.size() && tag_body_char(source[i])) ++i;
  if (i == 1 || i >= source.size() || source[i] != '>') return {};
  if (i + 1 < source.size() && source[i + 1] != ' ') return {};
  return std::string(source.substr(1, i - 1));
}

std::string_view strip_leading_tag(std::string_view source) {
  const auto tag = leading_tag(source);
  if (tag.empty()) return source;
  auto rest = source.substr(tag.size() + 2);
  if (!rest.empty() && rest[0] == ' ') rest.remove_prefix(1);
  return rest;
}

bool valid_lang_code(std::string_view code) {
  if (code.empty()) return false;
  for (char c : code)
    if (!tag_body_char(c)) return false;
  return true;
}

}  // namespace loresmt
