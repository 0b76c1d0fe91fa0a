#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wgm/errors.hpp"

// Structured text config: one `key = value` per line, `#` comments, values are
// scalars or bracketed arrays. Parse errors carry the line number.
namespace wgm {

class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  std::vector<double> get_double_array(const std::string& key) const;
  std::vector<long long> get_int_array(const std::string& key) const;

  void set(const std::string& key, const std::string& value);

  // stable fingerprint of the whole config (sorted key=value, FNV-1a 64)
  std::uint64_t digest() const;
  std::string digest_hex() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, std::string> entries_;
  std::map<std::string, int> lines_;
  std::string origin_ = "<empty>";

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

}  // namespace wgm
