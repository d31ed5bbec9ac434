#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crp/errors.hpp"

namespace crp {

// RFC-4180-style CSV: comma delimiter, double-quote quoting with "" escape,
// LF or CRLF line endings. Header row required.
class CsvTable {
 public:
  static CsvTable parse(std::string_view text, const std::string& source_name) {
    CsvTable t;
    t.source_ = source_name;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool row_has_data = false;
    std::size_t i = 0, n = text.size();
    auto end_field = [&] {
      row.push_back(std::move(field));
      field.clear();
    };
    auto end_row = [&] {
      end_field();
      if (t.header_.empty()) {
        t.header_ = std::move(row);
        for (std::size_t c = 0; c < t.header_.size(); ++c) t.index_[t.header_[c]] = c;
      } else {
        if (row.size() != t.header_.size())
          throw Error(ErrorKind::SchemaViolation,
                      source_name + " row " + std::to_string(t.rows_.size() + 2) + ": expected " +
                          std::to_string(t.header_.size()) + " fields, got " + std::to_string(row.size()));
        t.rows_.push_back(std::move(row));
      }
      row.clear();
      row_has_data = false;
    };
    while (i < n) {
      char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < n && text[i + 1] == '"') { field += '"'; i += 2; continue; }
          in_quotes = false;
          ++i;
        } else {
          field += c;
          ++i;
        }
        continue;
      }
      switch (c) {
        case '"': in_quotes = true; row_has_data = true; ++i; break;
        case ',': end_field(); row_has_data = true; ++i; break;
        case '\r': ++i; break;
        case '\n': end_row(); ++i; break;
        default: field += c; row_has_data = true; ++i; break;
      }
    }
    if (in_quotes)
      throw Error(ErrorKind::SchemaViolation, source_name + ": unterminated quoted field");
    if (row_has_data || !field.empty() || !row.empty()) end_row();
    if (t.header_.empty())
      throw Error(ErrorKind::SchemaViolation, source_name + ": missing header row");
    return t;
  }

  static CsvTable load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingFile, path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t n_rows() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t r) const { return rows_[r]; }
  const std::string& source() const { return source_; }

  bool has_column(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t column(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error(ErrorKind::SchemaViolation, source_ + ": missing column '" + name + "'");
    return it->second;
  }

  void require_columns(std::initializer_list<const char*> names) const {
    for (const char* n : names) column(n);
  }

  const std::string& cell(std::size_t r, std::size_t c) const { return rows_[r][c]; }

  // Typed getters report file, 1-based data row, and column name on failure.
  const std::string& get_str(std::size_t r, const std::string& col) const {
    return rows_[r][column(col)];
  }

  long get_int(std::size_t r, const std::string& col) const {
    const std::string& s = get_str(r, col);
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad_cell(r, col, s, "integer");
    return v;
  }

  double get_double(std::size_t r, const std::string& col) const {
    const std::string& s = get_str(r, col);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad_cell(r, col, s, "number");
    return v;
  }

  [[noreturn]] void bad_cell(std::size_t r, const std::string& col, const std::string& val,
                             const char* want) const {
    throw Error(ErrorKind::SchemaViolation, source_ + " row " + std::to_string(r + 2) + " column '" +
                                                col + "': cannot parse '" + val + "' as " + want);
  }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Shortest round-trip representation, deterministic across runs.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::string path) : path_(std::move(path)) {}

  void field(std::string_view s) {
    if (!line_.empty() || field_count_ > 0) line_ += ',';
    bool needs_quote = s.find_first_of(",\"\n\r") != std::string_view::npos;
    if (needs_quote) {
      line_ += '"';
      for (char c : s) {
        if (c == '"') line_ += '"';
        line_ += c;
      }
      line_ += '"';
    } else {
      line_.append(s.data(), s.size());
    }
    ++field_count_;
  }

  void field(double v) { field(format_double(v)); }
  void field(long v) { field(std::to_string(v)); }
  void field(int v) { field(std::to_string(v)); }
  void field(std::size_t v) { field(std::to_string(v)); }

  void end_row() {
    buffer_ += line_;
    buffer_ += '\n';
    line_.clear();
    field_count_ = 0;
  }

  template <typename... Ts>
  void row(Ts&&... vs) {
    (field(std::forward<Ts>(vs)), ...);
    end_row();
  }

  const std::string& buffer() const { return buffer_; }

  // Write-temp-then-rename so partial output never shadows a completed file.
  void commit() {
    std::string tmp = path_ + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::MissingFile, "cannot open for write: " + tmp);
      out << buffer_;
    }
    if (std::rename(tmp.c_str(), path_.c_str()) != 0)
      throw Error(ErrorKind::MissingFile, "cannot rename " + tmp + " to " + path_);
  }

 private:
  std::string path_;
  std::string line_;
  std::string buffer_;
  int field_count_ = 0;
};

}  // namespace crp
