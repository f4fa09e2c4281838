#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bregbal/errors.hpp"

namespace bregbal {

// Strict CSV dialect: comma separated, header required, UTF-8, '.' decimal,
// no quoting or locale handling. Deterministic to parse and to emit.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    throw ParseError("column '" + name + "' not found in CSV header");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty; header required");
  table.header = detail::split_csv_line(line);
  std::size_t row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != table.header.size())
      throw ParseError(path + ": row " + std::to_string(row_number) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(table.header.size()));
    table.rows.push_back(std::move(fields));
  }
  return table;
}

// Parses one numeric cell; empty or malformed cells are an error (no silent
// imputation). row_number is 1-based including the header.
inline double parse_numeric(const std::string& field, const std::string& column,
                            std::size_t row_number) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
  if (begin == end)
    throw ParseError("missing value in column '" + column + "' at row " +
                     std::to_string(row_number));
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError("invalid numeric value '" + field + "' in column '" + column +
                     "' at row " + std::to_string(row_number));
  return value;
}

// 17 significant digits guarantee an exact parse round-trip for doubles.
inline std::string format_numeric(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace bregbal
