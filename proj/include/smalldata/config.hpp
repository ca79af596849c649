#pragma once

// Plain-text `key = value` configuration with `#` comments and flag overrides.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldata {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& source = "<config>") {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(source + ":" + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key)) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    return parse(is, path);
  }

  /// Applies a `key=value` override; later overrides win.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
  }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: missing required key '" + key + "'");
    return it->second;
  }
  std::string get(const std::string& key, const std::string& fallback) const { return has(key) ? get(key) : fallback; }

  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key) && fallback) return *fallback;
    return convert<double>(key, [](const std::string& s, std::size_t* pos) { return std::stod(s, pos); });
  }

  std::uint64_t get_uint(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    if (!has(key) && fallback) return *fallback;
    const std::string v = get(key);
    if (!v.empty() && v[0] == '-') throw std::runtime_error("config: key '" + key + "' must be non-negative, got '" + v + "'");
    return convert<std::uint64_t>(key, [](const std::string& s, std::size_t* pos) { return std::stoull(s, pos); });
  }

  bool get_bool(const std::string& key, std::optional<bool> fallback = std::nullopt) const {
    if (!has(key) && fallback) return *fallback;
    const std::string v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: key '" + key + "' expects a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback = {}) const {
    return has(key) ? split_list(get(key)) : fallback;
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key, const std::vector<std::uint64_t>& fallback = {}) const {
    if (!has(key)) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(get(key))) {
      Config one;
      one.set(key, item);
      out.push_back(one.get_uint(key));
    }
    return out;
  }

  /// Rejects keys outside `known` so typos do not silently fall back to defaults.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k)) throw std::runtime_error("config: unknown key '" + k + "'");
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  template <class T, class F>
  T convert(const std::string& key, F&& f) const {
    const std::string v = get(key);
    try {
      std::size_t pos = 0;
      T out = f(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::logic_error&) {
      throw std::runtime_error("config: key '" + key + "' has invalid value '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace smalldata
