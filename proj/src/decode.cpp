#include "loresmt/decode.hpp"

#include <charconv>
#include <fstream>

#include "loresmt/text.hpp"

namespace loresmt::decode {

namespace {

constexpr std::string_view kSep = " ||| ";

}  // namespace

std::string format_score(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw NBestParseError("score formatting failed");
  return std::string(buf, p);
}

double parse_score(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw NBestParseError("bad score: '" + s + "'");
  return v;
}

void save_nbest(const std::filesystem::path& path,
                const std::vector<NBestEntry>& entries) {
  std::ofstream out(path);
  if (!out)
    throw NBestParseError("cannot open for writing: " + path.string());
  for (const auto& e : entries) {
    if (e.text.find("|||") != std::string::npos)
      throw NBestParseError("hypothesis text contains the field separator");
    out << e.id << kSep << e.text << kSep << format_score(e.raw) << kSep
        << format_score(e.norm) << '\n';
  }
  if (!out) throw NBestParseError("write failed: " + path.string());
}

std::vector<NBestEntry> load_nbest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NBestParseError("cannot open: " + path.string());
  std::vector<NBestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t at = 0;
    while (true) {
      const std::size_t pos = line.find(kSep, at);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(at));
        break;
      }
      fields.push_back(line.substr(at, pos - at));
      at = pos + kSep.size();
    }
    if (fields.size() != 4)
      throw NBestParseError("line " + std::to_string(lineno) +
                            ": expected 4 fields, got " +
                            std::to_string(fields.size()));
    NBestEntry e;
    try {
      std::size_t used = 0;
      e.id = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument(fields[0]);
    } catch (const std::exception&) {
      throw NBestParseError("line " + std::to_string(lineno) + ": bad id '" +
                            fields[0] + "'");
    }
    e.text = fields[1];
    e.raw = parse_score(fields[2]);
    e.norm = parse_score(fields[3]);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace loresmt::decode
