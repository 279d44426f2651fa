#pragma once

// Delimited text with a header row. Fields are comma separated and trimmed;
// blank lines and lines starting with '#' are skipped.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace egat::text {

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  // Throws DataError when the column is absent.
  std::size_t column(std::string_view name) const;
  std::string where(std::size_t row) const;
};

Table read_table(std::istream& in, std::string source);
std::vector<std::string> split(std::string_view line, char delim = ',');
std::string trim(std::string_view s);

double to_double(std::string_view s, const std::string& where);
std::int64_t to_int(std::string_view s, const std::string& where);

// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

}  // namespace egat::text
