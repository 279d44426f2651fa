#pragma once

// Flat `key = value` configuration. '#' starts a comment line.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace egat::config {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  // Later entries overwrite earlier ones.
  void merge(const KeyValues& other);

  // Typed getters throw ConfigError on malformed values.
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  void write(std::ostream& out) const;

 private:
  std::string source_ = "<config>";
  std::map<std::string, std::string> values_;
};

}  // namespace egat::config
