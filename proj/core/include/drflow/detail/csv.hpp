#pragma once

// Minimal CSV helpers for the flat numeric tables this project reads and
// writes. No quoting or escaping: none of the documented schemas need it.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drflow/errors.hpp"

namespace drflow::detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // raw fields, whitespace trimmed
  std::vector<int> line_numbers;               // 1-based source line per row
};

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open file: " + path);
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::vector<std::string> fields = split_csv_line(stripped);
    for (auto& f : fields) f = trim(f);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      t.rows.push_back(std::move(fields));
      t.line_numbers.push_back(lineno);
    }
  }
  if (t.header.empty()) throw io_error("empty file: " + path);
  return t;
}

inline void require_header(const CsvTable& t, const std::string& expected,
                           const std::string& path) {
  std::string got;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) got += ',';
    got += t.header[i];
  }
  if (got != expected)
    throw io_error(path + ": expected header '" + expected + "', got '" + got + "'");
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(context + ": cannot parse number '" + s + "'");
  }
}

inline int parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(context + ": cannot parse integer '" + s + "'");
  }
}

/// Empty field -> nullopt, otherwise parsed double.
inline std::optional<double> parse_optional_double(const std::string& s,
                                                   const std::string& context) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, context);
}

}  // namespace drflow::detail
