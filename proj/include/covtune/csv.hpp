#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "covtune/error.hpp"
#include "covtune/matrix.hpp"

namespace covtune {

namespace detail {

inline std::string_view trim(std::string_view s) noexcept {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool blank(std::string_view s) noexcept { return trim(s).empty(); }

// Splits one CSV line into numbers; `line` is for messages, columns count fields from 1.
inline std::vector<double> parse_numeric_row(std::string_view text, std::size_t line) {
  std::vector<double> out;
  std::size_t column = 1;
  while (true) {
    const auto comma = text.find(',');
    const auto field = trim(text.substr(0, comma));
    double v = 0.0;
    if (field.empty()) throw ParseError("empty field", line, column);
    const char* begin = field.data();
    if (*begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size())
      throw ParseError("'" + std::string(field) + "' is not a number", line, column);
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(field) + "'", line, column);
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
    ++column;
  }
  return out;
}

inline std::vector<std::vector<double>> read_numeric_rows(std::istream& in, bool header) {
  std::vector<std::vector<double>> rows;
  std::string text;
  std::size_t line = 0;
  std::size_t width = 0;
  while (std::getline(in, text)) {
    ++line;
    if (line == 1 && text.starts_with("\xEF\xBB\xBF")) text.erase(0, 3);
    if (header && line == 1) continue;
    if (blank(text)) continue;
    auto row = parse_numeric_row(text, line);
    if (rows.empty()) width = row.size();
    if (row.size() != width)
      throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(row.size()), line,
                       std::min(row.size(), width) + 1);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

/// Headerless numeric CSV, one observation per line. Blank lines are skipped.
inline Dataset read_dataset(std::istream& in, bool header = false) {
  auto rows = detail::read_numeric_rows(in, header);
  if (rows.empty()) throw DomainError("data file has no rows");
  const std::size_t p = rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * p);
  for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
  return Dataset(rows.size(), p, std::move(values));
}

inline Dataset read_dataset(const std::string& path, bool header = false) {
  auto in = detail::open_input(path);
  return read_dataset(in, header);
}

/// p lines of p values. The matrix must be symmetric up to 1e-12 relative; the lower triangle is kept.
inline SymMatrix read_matrix(std::istream& in, bool header = false) {
  auto rows = detail::read_numeric_rows(in, header);
  const std::size_t p = rows.size();
  if (p == 0) throw DomainError("matrix file has no rows");
  if (rows.front().size() != p)
    throw DomainError("matrix file is " + std::to_string(p) + "x" + std::to_string(rows.front().size()) +
                      ", expected a square matrix");
  double scale = 0.0;
  for (const auto& r : rows)
    for (double v : r) scale = std::max(scale, std::abs(v));
  SymMatrix m(p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      if (std::abs(rows[i][j] - rows[j][i]) > 1e-12 * scale)
        throw DomainError("matrix is not symmetric at (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")");
      m.set(i, j, rows[i][j]);
    }
  return m;
}

inline SymMatrix read_matrix(const std::string& path, bool header = false) {
  auto in = detail::open_input(path);
  return read_matrix(in, header);
}

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_matrix(std::ostream& out, const SymMatrix& m) {
  for (std::size_t i = 0; i < m.dim(); ++i) {
    for (std::size_t j = 0; j < m.dim(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline void write_dataset(std::ostream& out, const Dataset& d) {
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.p(); ++j) {
      if (j) out << ',';
      out << format_double(d(i, j));
    }
    out << '\n';
  }
}

}  // namespace covtune
