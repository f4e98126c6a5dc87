#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace spcagan::csv {

// RFC-4180 style field splitting: commas, double-quoted fields, "" escapes.
// Returns false on an unterminated quote.
bool split(std::string_view line, std::vector<std::string>& fields);

std::string quote(std::string_view field);
std::string join(const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t malformed = 0;  // rows with a bad quote or a wrong field count
};

// Lines starting with '#' are treated as comments and skipped.
Table read(const std::filesystem::path& path);

// Writes to "<path>.tmp" then renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace spcagan::csv
