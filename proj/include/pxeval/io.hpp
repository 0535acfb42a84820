#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pxeval::io {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Splits on '\n', dropping a trailing '\r' and blank lines. Line numbers are
/// 1-based positions in the original text.
struct Line {
    std::size_t number;
    std::string_view text;
};
std::vector<Line> nonblank_lines(std::string_view text);

std::string sha256_hex(std::string_view data);

} // namespace pxeval::io
