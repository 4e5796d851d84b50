// Plain-text `key = value` configuration. A key may repeat to build a list,
// and a single value may also hold a comma-separated list. '#' starts a comment.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace come {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, std::vector<std::string> values) { entries_[key] = std::move(values); }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  /// Every value given for `key`, in file order, comma lists flattened.
  const std::vector<std::string>& values(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long> get_ints(const std::string& key, std::vector<long> fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

bool parse_bool(const std::string& s);

}  // namespace come
