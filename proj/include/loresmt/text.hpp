#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace loresmt {

// --- UTF-8 <-> codepoints -------------------------------------------------

// Decodes UTF-8 into codepoints. Invalid bytes decode to U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);

std::string utf8_encode(const std::vector<char32_t>& cps);
void utf8_append(std::string& out, char32_t cp);

// Number of codepoints in a UTF-8 string.
std::size_t utf8_length(std::string_view s);

// --- text helpers ----------------------------------------------------------

// Collapses runs of whitespace to single spaces and trims both ends.
// All corpus text is brought to this canonical form before tagging.
std::string normalize_whitespace(std::string_view s);

std::vector<std::string> split_words(std::string_view s);
std::string join_words(const std::vector<std::string>& words);

bool starts_with(std::string_view s, std::string_view prefix);

// Lowercases ASCII, Latin-1 supplement and Latin Extended-A letters;
// everything else passes through. Covers the Romance-language fixtures.
char32_t lower_codepoint(char32_t c);
std::string lower_text(std::string_view s);

// --- language tags ---------------------------------------------------------

// A tag is `<` + [a-z0-9_]+ + `>` appearing as the first whitespace-delimited
// token. Returns the tag body (without angle brackets) or empty string.
std::string leading_tag(std::string_view source);

// Text after the leading tag and one separating space ("" if no tag).
std::string_view strip_leading_tag(std::string_view source);

bool valid_lang_code(std::string_view code);

}  // namespace loresmt
