#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace loresmt {

// SHA-256 hex digest of a byte string (manifest content addressing).
std::string sha256_hex(std::string_view data);

// SHA-256 hex digest of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace loresmt
