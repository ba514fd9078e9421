#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace semcomm {

/// Flat key/value configuration (grammar in docs/config-format.md):
///
///   # comment
///   key = scalar
///   key = [a, b, c]
///
/// Scalars are bare tokens or double-quoted strings. Keys are unique.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::vector<std::string> values, bool is_list);
  // Keys of `other` replace those of this config.
  void merge(const Config& other);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // A scalar is accepted as a one-element list.
  std::vector<std::string> get_strings(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<bool> get_bools(const std::string& key) const;

  std::vector<std::string> keys() const;
  // Throws InvalidConfig naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  struct Value {
    std::vector<std::string> items;
    bool is_list = false;
  };
  const Value* find(const std::string& key) const;
  const std::string& scalar(const std::string& key) const;

  std::map<std::string, Value> values_;
};

double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

}  // namespace semcomm
