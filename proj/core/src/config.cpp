// SPDX-License-Identifier: Apache-2.0
#include "citab/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "citab/errors.hpp"

namespace citab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(int line, const std::string& msg) {
  throw IoError("config line " + std::to_string(line) + ": " + msg);
}

// Strips a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool brackets_balanced(const std::string& s) {
  bool in_string = false;
  int depth = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      --depth;
    }
  }
  return depth <= 0;
}

struct ValueParser {
  const std::string& s;
  size_t pos = 0;
  int line;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  json parse_value() {
    skip_ws();
    if (pos >= s.size()) fail(line, "missing value");
    const char c = s[pos];
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (s.compare(pos, 4, "true") == 0 && token_ends(pos + 4)) {
      pos += 4;
      return json(true);
    }
    if (s.compare(pos, 5, "false") == 0 && token_ends(pos + 5)) {
      pos += 5;
      return json(false);
    }
    return parse_number();
  }

  bool token_ends(size_t p) const {
    return p >= s.size() || !std::isalnum(static_cast<unsigned char>(s[p]));
  }

  json parse_string() {
    ++pos;  // opening quote
    std::string out;
    while (pos < s.size() && s[pos] != '"') {
      char c = s[pos++];
      if (c == '\\') {
        if (pos >= s.size()) fail(line, "dangling escape in string");
        const char e = s[pos++];
        switch (e) {
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case 'r': c = '\r'; break;
          default: fail(line, std::string("unsupported escape \\") + e);
        }
      }
      out += c;
    }
    if (pos >= s.size()) fail(line, "unterminated string");
    ++pos;  // closing quote
    return json(out);
  }

  json parse_array() {
    ++pos;  // '['
    json arr = json::array();
    skip_ws();
    if (pos < s.size() && s[pos] == ']') {
      ++pos;
      return arr;
    }
    while (true) {
      arr.push_back(parse_value());
      skip_ws();
      if (pos < s.size() && s[pos] == ',') {
        ++pos;
        skip_ws();
        if (pos < s.size() && s[pos] == ']') {  // trailing comma
          ++pos;
          return arr;
        }
        continue;
      }
      if (pos < s.size() && s[pos] == ']') {
        ++pos;
        return arr;
      }
      fail(line, "expected ',' or ']' in array");
    }
  }

  json parse_number() {
    const size_t start = pos;
    while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '+' ||
                              s[pos] == '-' || s[pos] == '.' || s[pos] == '_'))
      ++pos;
    std::string tok = s.substr(start, pos - start);
    if (tok.empty()) fail(line, "expected a value");
    std::string digits;
    for (char c : tok)
      if (c != '_') digits += c;
    // integer first, then float
    {
      long long iv = 0;
      const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), iv);
      if (ec == std::errc() && p == digits.data() + digits.size()) return json(iv);
    }
    try {
      size_t used = 0;
      const double dv = std::stod(digits, &used);
      if (used == digits.size()) return json(dv);
    } catch (const std::exception&) {
    }
    fail(line, "cannot parse value '" + tok + "'");
  }
};

std::vector<std::string> split_path(const std::string& s, int line) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == '.') {
      if (cur.empty()) fail(line, "empty path segment");
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (trim(cur).empty()) fail(line, "empty path segment");
  parts.push_back(trim(cur));
  return parts;
}

// Walks a dotted path from the root, descending into the last element of
// any array-of-tables encountered on the way.
json* walk(json& root, const std::vector<std::string>& parts, size_t count, int line) {
  json* cur = &root;
  for (size_t i = 0; i < count; ++i) {
    json& slot = (*cur)[parts[i]];
    if (slot.is_null()) slot = json::object();
    if (slot.is_array()) {
      if (slot.empty()) fail(line, "path '" + parts[i] + "' refers to an empty table array");
      cur = &slot.back();
    } else if (slot.is_object()) {
      cur = &slot;
    } else {
      fail(line, "path '" + parts[i] + "' is not a table");
    }
  }
  return cur;
}

}  // namespace

json parse_toml(const std::string& text) {
  json root = json::object();
  json* target = &root;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    // Join continuation lines for multiline arrays.
    while (!brackets_balanced(line)) {
      std::string next;
      if (!std::getline(in, next)) fail(line_no, "unterminated array");
      ++line_no;
      line += " " + strip_comment(next);
    }
    line = trim(line);
    if (line.empty()) continue;

    if (line.rfind("[[", 0) == 0) {
      if (line.size() < 5 || line.substr(line.size() - 2) != "]]")
        fail(line_no, "malformed table-array header");
      const auto parts = split_path(trim(line.substr(2, line.size() - 4)), line_no);
      json* parent = walk(root, parts, parts.size() - 1, line_no);
      json& slot = (*parent)[parts.back()];
      if (slot.is_null()) slot = json::array();
      if (!slot.is_array()) fail(line_no, "'" + parts.back() + "' is not a table array");
      slot.push_back(json::object());
      target = &slot.back();
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "malformed table header");
      const auto parts = split_path(trim(line.substr(1, line.size() - 2)), line_no);
      target = walk(root, parts, parts.size(), line_no);
      continue;
    }

    const size_t eq = [&] {
      bool in_string = false;
      for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        else if (line[i] == '=' && !in_string) return i;
      }
      return std::string::npos;
    }();
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");

    std::string key = trim(line.substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"')
      key = key.substr(1, key.size() - 2);
    if (key.empty()) fail(line_no, "empty key");

    ValueParser vp{line, eq + 1, line_no};
    json value = vp.parse_value();
    vp.skip_ws();
    if (vp.pos != line.size()) fail(line_no, "trailing characters after value");

    if (target->contains(key)) fail(line_no, "duplicate key '" + key + "'");
    (*target)[key] = std::move(value);
  }
  return root;
}

json load_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace citab
