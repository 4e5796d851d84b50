#include "come/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace come {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T, typename F>
std::vector<T> convert_all(const std::vector<std::string>& raw, F&& f) {
  std::vector<T> out;
  out.reserve(raw.size());
  for (const auto& s : raw) out.push_back(f(s));
  return out;
}

}  // namespace

bool parse_bool(const std::string& s) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("not a boolean: " + s);
}

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    std::istringstream parts(line.substr(eq + 1));
    std::string item;
    auto& bucket = cfg.entries_[key];
    while (std::getline(parts, item, ',')) {
      item = trim(item);
      if (!item.empty()) bucket.push_back(item);
    }
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse(in);
}

const std::vector<std::string>& KeyValueConfig::values(const std::string& key) const {
  static const std::vector<std::string> kEmpty;
  auto it = entries_.find(key);
  return it == entries_.end() ? kEmpty : it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto& v = values(key);
  if (v.empty()) return fallback;
  if (v.size() > 1) throw std::invalid_argument("config key " + key + " expects a single value");
  return v.front();
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  return has(key) ? std::stol(get_string(key, "")) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? std::stod(get_string(key, "")) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? parse_bool(get_string(key, "")) : fallback;
}

std::vector<long> KeyValueConfig::get_ints(const std::string& key, std::vector<long> fallback) const {
  if (!has(key)) return fallback;
  return convert_all<long>(values(key), [](const std::string& s) { return std::stol(s); });
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key,
                                                std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  return convert_all<double>(values(key), [](const std::string& s) { return std::stod(s); });
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

}  // namespace come
