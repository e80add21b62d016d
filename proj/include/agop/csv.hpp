#pragma once

// Minimal CSV reading for the repository's own tables: comma separated,
// optional double-quoted cells, header row required.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace agop {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> cells;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  std::optional<std::size_t> find(const std::string& column) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == column) return i;
    return std::nullopt;
  }
  std::size_t column(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw CsvError(1, "missing column '" + name + "'");
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (t.header.empty()) {
      t.header = split_csv_line(line);
      continue;
    }
    t.rows.push_back({lineno, split_csv_line(line)});
  }
  if (t.header.empty()) throw CsvError(1, "empty file, header row expected");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

/// Strict number parse; "NaN"/"nan" map to quiet NaN.
inline double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  if (s == "NaN" || s == "nan" || s == "NAN") return std::numeric_limits<double>::quiet_NaN();
  if (s.empty()) throw CsvError(line, "empty value in column '" + column + "'");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw CsvError(line, "'" + s + "' in column '" + column + "' is not a number");
  }
  if (used != s.size()) throw CsvError(line, "'" + s + "' in column '" + column + "' is not a number");
  return v;
}

inline unsigned long long parse_count(const std::string& s, std::size_t line, const std::string& column) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw CsvError(line, "'" + s + "' in column '" + column + "' is not a non-negative integer");
  return std::stoull(s);
}

/// Row accessor bound to a table header.
class CsvRecord {
 public:
  CsvRecord(const CsvTable& t, const CsvRow& r) : t_(t), r_(r) {
    if (r.cells.size() != t.header.size())
      throw CsvError(r.line, "expected " + std::to_string(t.header.size()) + " cells, found " +
                                 std::to_string(r.cells.size()));
  }
  const std::string& text(const std::string& col) const { return r_.cells[t_.column(col)]; }
  double number(const std::string& col) const { return parse_double(text(col), r_.line, col); }
  unsigned long long count(const std::string& col) const { return parse_count(text(col), r_.line, col); }
  std::size_t line() const { return r_.line; }

 private:
  const CsvTable& t_;
  const CsvRow& r_;
};

}  // namespace agop
