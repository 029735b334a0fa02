// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "deepbound/error.hpp"
#include "deepbound/serialization.hpp"

namespace deepbound {

/// Shortest decimal text that parses back to the same value.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_number(float v) { return format_number(static_cast<double>(v)); }

inline double parse_number(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw FormatError("not a number: \"" + std::string(s) + "\"");
  }
  return v;
}

/// Comma-separated table with a header row. Cells never contain commas or newlines.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw UsageError("CSV row width does not match header");
    rows_.push_back(std::move(row));
  }

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (header_[i] == name) return i;
    }
    throw FormatError("CSV has no column " + std::string(name));
  }

  std::string encode() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  static CsvTable decode(std::string_view text, const std::string& context = "csv") {
    std::vector<std::vector<std::string>> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string_view l = text.substr(pos, eol - pos);
      if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
      pos = eol + 1;
      if (l.empty()) continue;
      std::vector<std::string> cells;
      std::size_t start = 0;
      while (true) {
        std::size_t comma = l.find(',', start);
        cells.emplace_back(l.substr(start, comma == std::string_view::npos ? l.npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      lines.push_back(std::move(cells));
    }
    if (lines.empty()) throw FormatError(context + ": empty CSV");
    CsvTable t(std::move(lines.front()));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].size() != t.header_.size()) {
        throw FormatError(context + ": row " + std::to_string(i) + " has " +
                          std::to_string(lines[i].size()) + " cells, expected " +
                          std::to_string(t.header_.size()));
      }
      t.rows_.push_back(std::move(lines[i]));
    }
    return t;
  }

  void save(const std::filesystem::path& path) const { write_file(path, encode()); }

  static CsvTable load(const std::filesystem::path& path) {
    return decode(read_file(path), path.string());
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace deepbound
