#pragma once

// Minimal TOML reader covering the subset the config files use: bare
// keys, strings, integers, floats, booleans, flat arrays, [tables] and
// [[arrays of tables]]. No dotted keys, no inline tables, no dates.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cbseq/common.hpp"

namespace cbseq::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<std::string, std::int64_t, double, bool, Array> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_double() const { return std::holds_alternative<double>(v); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_array() const { return std::holds_alternative<Array>(v); }

  const std::string& as_string() const {
    if (!is_string()) throw Error("TOML value is not a string");
    return std::get<std::string>(v);
  }
  std::int64_t as_int() const {
    if (!is_int()) throw Error("TOML value is not an integer");
    return std::get<std::int64_t>(v);
  }
  double as_double() const {
    if (is_int()) return static_cast<double>(std::get<std::int64_t>(v));
    if (!is_double()) throw Error("TOML value is not a number");
    return std::get<double>(v);
  }
  bool as_bool() const {
    if (!is_bool()) throw Error("TOML value is not a boolean");
    return std::get<bool>(v);
  }
  const Array& as_array() const {
    if (!is_array()) throw Error("TOML value is not an array");
    return std::get<Array>(v);
  }
};

struct Table {
  std::map<std::string, Value> values;
  std::map<std::string, Table> tables;
  std::map<std::string, std::vector<Table>> table_arrays;

  bool has(const std::string& key) const { return values.count(key) > 0; }

  const Value& at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw Error("missing TOML key: " + key);
    return it->second;
  }

  std::string get_string(const std::string& key,
                         const std::string& dflt) const {
    return has(key) ? at(key).as_string() : dflt;
  }
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    return has(key) ? at(key).as_int() : dflt;
  }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? at(key).as_double() : dflt;
  }
  bool get_bool(const std::string& key, bool dflt) const {
    return has(key) ? at(key).as_bool() : dflt;
  }
};

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Removes a trailing comment that is not inside a string literal.
inline std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline Value parse_scalar(const std::string& raw, int line_no) {
  std::string s = strip(raw);
  if (s.empty()) throw Error("TOML line " + std::to_string(line_no) +
                             ": empty value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"')
      throw Error("TOML line " + std::to_string(line_no) +
                  ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        char c = s[++i];
        switch (c) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: out += c;
        }
      } else {
        out += s[i];
      }
    }
    return Value{out};
  }
  if (s == "true") return Value{true};
  if (s == "false") return Value{false};
  bool looks_float = s.find_first_of(".eE") != std::string::npos &&
                     s.find_first_of("0123456789") != std::string::npos;
  try {
    if (!looks_float) {
      std::size_t used = 0;
      std::int64_t i = std::stoll(s, &used);
      if (used == s.size()) return Value{i};
    }
    std::size_t used = 0;
    double d = std::stod(s, &used);
    if (used == s.size()) return Value{d};
  } catch (const std::exception&) {
  }
  throw Error("TOML line " + std::to_string(line_no) +
              ": cannot parse value '" + s + "'");
}

inline Value parse_value(const std::string& raw, int line_no) {
  std::string s = strip(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']')
      throw Error("TOML line " + std::to_string(line_no) +
                  ": unterminated array");
    Array arr;
    std::string body = s.substr(1, s.size() - 2);
    std::string cur;
    bool in_str = false;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!strip(cur).empty()) arr.push_back(parse_scalar(cur, line_no));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!strip(cur).empty()) arr.push_back(parse_scalar(cur, line_no));
    return Value{arr};
  }
  return parse_scalar(s, line_no);
}

}  // namespace detail

inline Table parse(std::istream& in) {
  Table root;
  Table* current = &root;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = detail::strip(detail::strip_comment(line));
    if (s.empty()) continue;
    if (s.rfind("[[", 0) == 0) {
      if (s.size() < 5 || s.substr(s.size() - 2) != "]]")
        throw Error("TOML line " + std::to_string(line_no) +
                    ": bad table array header");
      std::string name = detail::strip(s.substr(2, s.size() - 4));
      root.table_arrays[name].emplace_back();
      current = &root.table_arrays[name].back();
      continue;
    }
    if (s.front() == '[') {
      if (s.back() != ']')
        throw Error("TOML line " + std::to_string(line_no) +
                    ": bad table header");
      std::string name = detail::strip(s.substr(1, s.size() - 2));
      current = &root.tables[name];
      continue;
    }
    std::size_t eq = std::string::npos;
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_str = !in_str;
      if (s[i] == '=' && !in_str) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos)
      throw Error("TOML line " + std::to_string(line_no) +
                  ": expected key = value");
    std::string key = detail::strip(s.substr(0, eq));
    if (key.empty())
      throw Error("TOML line " + std::to_string(line_no) + ": empty key");
    if (current->values.count(key))
      throw Error("TOML line " + std::to_string(line_no) +
                  ": duplicate key '" + key + "'");
    current->values[key] = detail::parse_value(s.substr(eq + 1), line_no);
  }
  return root;
}

inline Table parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

inline Table parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open TOML file: " + path);
  return parse(in);
}

}  // namespace cbseq::toml
