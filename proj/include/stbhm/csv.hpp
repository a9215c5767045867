#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace stbhm::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column index by name; throws UsageError when absent.
  std::size_t column(std::string_view name) const;
};

/// Reads a comma-separated file with one header line. Lines starting with '#'
/// and blank lines are skipped.
Table read(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view line);

/// Strict numeric parse; throws UsageError mentioning `line` on failure.
double parse_double(std::string_view text, std::size_t line, std::string_view what);
long long parse_int(std::string_view text, std::size_t line, std::string_view what);

/// Shortest representation that round-trips exactly.
std::string format_double(double v);

std::ofstream open_output(const std::filesystem::path& path);

}  // namespace stbhm::csv
