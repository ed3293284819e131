#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grobust {

// Bad argument shapes, empty inputs, missing annotations.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A well-formed request the library does not support (zero-one gradients,
// non-binary groups for the y != a modes, ...).
class UnsupportedError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// CSV ingestion failure; row is 1-based over data rows (header excluded).
class IngestError : public std::runtime_error {
public:
  IngestError(std::size_t row, std::string column, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ", column '" + column + "': " + what),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

private:
  std::size_t row_;
  std::string column_;
};

// Configuration file failure; line is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
public:
  ParseError(std::string key, std::size_t line, const std::string& what)
      : std::runtime_error(format(key, line, what)), key_(std::move(key)), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

private:
  static std::string format(const std::string& key, std::size_t line, const std::string& what) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!key.empty()) out += "'" + key + "': ";
    return out + what;
  }

  std::string key_;
  std::size_t line_;
};

}  // namespace grobust
