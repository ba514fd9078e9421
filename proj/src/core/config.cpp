#include "core/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "core/errors.hpp"

namespace semcomm {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view k) {
  if (k.empty() || !(std::isalpha(static_cast<unsigned char>(k[0])) || k[0] == '_')) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
  return true;
}

// Parses one scalar starting at s[pos]; stops before ',', ']' or '#'.
std::string parse_scalar(std::string_view s, std::size_t& pos, std::size_t line) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  std::string out;
  if (pos < s.size() && s[pos] == '"') {
    ++pos;
    while (true) {
      if (pos >= s.size()) fail(line, "unterminated string");
      const char c = s[pos++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos >= s.size()) fail(line, "unterminated escape");
        const char e = s[pos++];
        if (e == 'n') out.push_back('\n');
        else if (e == 't') out.push_back('\t');
        else if (e == '"' || e == '\\') out.push_back(e);
        else fail(line, std::string("unknown escape \\") + e);
      } else {
        out.push_back(c);
      }
    }
  } else {
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] != ',' && s[pos] != ']' && s[pos] != '#' && s[pos] != '[' && s[pos] != '"') ++pos;
    out = std::string(trim(s.substr(start, pos - start)));
    if (out.empty()) fail(line, "empty value");
  }
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  return out;
}

}  // namespace

double parse_double(std::string_view s, std::string_view what) {
  const std::string str(trim(s));
  if (str == "inf" || str == "+inf") return INFINITY;
  if (str == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(str.data(), str.data() + str.size(), v);
  if (res.ec != std::errc{} || res.ptr != str.data() + str.size() || !std::isfinite(v))
    throw Error(ErrorCode::InvalidConfig, std::string(what) + ": '" + str + "' is not a number");
  return v;
}

long long parse_int(std::string_view s, std::string_view what) {
  const std::string str(trim(s));
  long long v = 0;
  const auto res = std::from_chars(str.data(), str.data() + str.size(), v);
  if (res.ec != std::errc{} || res.ptr != str.data() + str.size())
    throw Error(ErrorCode::InvalidConfig, std::string(what) + ": '" + str + "' is not an integer");
  return v;
}

bool parse_bool(std::string_view s, std::string_view what) {
  const auto t = trim(s);
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw Error(ErrorCode::InvalidConfig, std::string(what) + ": '" + std::string(t) + "' is not a boolean");
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string_view line = raw;
    std::size_t pos = 0;
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos == line.size() || line[pos] == '#') continue;
    const auto eq = line.find('=', pos);
    if (eq == std::string_view::npos) fail(line_no, "expected 'key = value'");
    const std::string key(trim(line.substr(pos, eq - pos)));
    if (!valid_key(key)) fail(line_no, "invalid key '" + key + "'");
    if (cfg.values_.count(key)) fail(line_no, "duplicate key '" + key + "'");
    pos = eq + 1;
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    Value v;
    if (pos < line.size() && line[pos] == '[') {
      v.is_list = true;
      ++pos;
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
      if (pos < line.size() && line[pos] == ']') {
        ++pos;
      } else {
        while (true) {
          v.items.push_back(parse_scalar(line, pos, line_no));
          if (pos < line.size() && line[pos] == ',') {
            ++pos;
            continue;
          }
          if (pos < line.size() && line[pos] == ']') {
            ++pos;
            break;
          }
          fail(line_no, "expected ',' or ']' in list");
        }
      }
    } else {
      if (pos == line.size() || line[pos] == '#') fail(line_no, "missing value for '" + key + "'");
      v.items.push_back(parse_scalar(line, pos, line_no));
    }
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos < line.size() && line[pos] != '#') fail(line_no, "unexpected text after value");
    cfg.values_[key] = std::move(v);
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InvalidConfig, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, std::vector<std::string> values, bool is_list) {
  values_[key] = Value{std::move(values), is_list};
}

void Config::merge(const Config& other) {
  for (const auto& [key, value] : other.values_) values_[key] = value;
}

const Config::Value* Config::find(const std::string& key) const {
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

const std::string& Config::scalar(const std::string& key) const {
  const Value* v = find(key);
  if (v->is_list || v->items.size() != 1) throw Error(ErrorCode::InvalidConfig, "config key '" + key + "' must be a single value");
  return v->items.front();
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? scalar(key) : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(scalar(key), key) : fallback;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  return has(key) ? parse_int(scalar(key), key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? parse_bool(scalar(key), key) : fallback;
}

std::vector<std::string> Config::get_strings(const std::string& key) const {
  const Value* v = find(key);
  return v ? v->items : std::vector<std::string>{};
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : get_strings(key)) out.push_back(parse_double(s, key));
  return out;
}

std::vector<bool> Config::get_bools(const std::string& key) const {
  std::vector<bool> out;
  for (const auto& s : get_strings(key)) out.push_back(parse_bool(s, key));
  return out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, _] : values_) k.push_back(key);
  return k;
}

void Config::require_known(const std::set<std::string>& known) const {
  for (const auto& [key, _] : values_)
    if (!known.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

}  // namespace semcomm
