#pragma once

#include <cctype>
#include <cstdint>
#include <limits>
#include <vector>
#include <string>
#include <string_view>

#include <json.hpp>

#include "streamctx/error.hpp"

// Reads the subset of TOML used by run configs into JSON: [table] and
// [dotted.table] headers, bare/quoted/dotted keys, basic and literal strings,
// integers, floats, booleans, (multi-line) arrays and inline tables.
// Dates and array-of-tables are not supported.
namespace streamctx::toml {

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (peek() == '[') fail("arrays of tables are not supported");
        auto path = key_path();
        skip_ws();
        expect(']');
        table = &root;
        for (const auto& k : path) {
          table = &(*table)[k];
          if (table->is_null()) *table = nlohmann::json::object();
          if (!table->is_object()) fail("'" + k + "' is not a table");
        }
      } else {
        assign(*table);
      }
      end_of_line();
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }

  [[noreturn]] void fail(const std::string& why) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw Error(ErrorKind::invalid_config, "TOML line " + std::to_string(line) + ": " + why);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_ws() {
    while (peek() == ' ' || peek() == '\t') ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        ++pos_;
        continue;
      }
      break;
    }
  }

  // Whitespace, comments and newlines inside arrays / inline tables.
  void skip_space_any() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') ++pos_;
      else break;
    }
  }

  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string key() {
    skip_ws();
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const auto start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (start == pos_) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{key()};
    skip_ws();
    while (peek() == '.') {
      ++pos_;
      path.push_back(key());
      skip_ws();
    }
    return path;
  }

  void assign(nlohmann::json& table) {
    auto path = key_path();
    skip_ws();
    expect('=');
    skip_ws();
    nlohmann::json* target = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      target = &(*target)[path[i]];
      if (target->is_null()) *target = nlohmann::json::object();
      if (!target->is_object()) fail("'" + path[i] + "' is not a table");
    }
    if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*target)[path.back()] = value();
  }

  nlohmann::json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == '{') return inline_table();
    if (s_.substr(pos_, 4) == "true") { pos_ += 4; return true; }
    if (s_.substr(pos_, 5) == "false") { pos_ += 5; return false; }
    return number();
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (char e = s_[pos_++]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    const auto end = s_.find('\'', pos_);
    if (end == std::string_view::npos || s_.substr(pos_, end - pos_).find('\n') != std::string_view::npos)
      fail("unterminated literal string");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  nlohmann::json array() {
    expect('[');
    nlohmann::json out = nlohmann::json::array();
    while (true) {
      skip_space_any();
      if (peek() == ']') { ++pos_; return out; }
      out.push_back(value());
      skip_space_any();
      if (peek() == ',') { ++pos_; continue; }
      expect(']');
      return out;
    }
  }

  nlohmann::json inline_table() {
    expect('{');
    nlohmann::json out = nlohmann::json::object();
    skip_ws();
    if (peek() == '}') { ++pos_; return out; }
    while (true) {
      assign(out);
      skip_ws();
      if (peek() == ',') { ++pos_; continue; }
      expect('}');
      return out;
    }
  }

  nlohmann::json number() {
    const auto start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_'))
      ++pos_;
    std::string token;
    for (char c : s_.substr(start, pos_ - start))
      if (c != '_') token += c;
    if (token.empty()) fail("expected a value");
    if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
    if (token == "-inf") return -std::numeric_limits<double>::infinity();
    const bool is_float = token.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(token, &used);
        if (used == token.size()) return v;
      } else {
        const long long v = std::stoll(token, &used, 10);
        if (used == token.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value '" + token + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json parse(std::string_view text) { return detail::Parser(text).parse(); }

}  // namespace streamctx::toml
