#include "wgm/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wgm {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_number(const std::string& s, const std::string& where) {
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw config_error(where + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw config_error(where + ": trailing characters in number: '" + s + "'");
  return v;
}

std::vector<std::string> split_array(const std::string& s, const std::string& where) {
  std::string t = trim(s);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']')
    throw config_error(where + ": expected [a, b, ...], got '" + s + "'");
  t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  std::string cur;
  for (char c : t) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  for (const auto& e : out)
    if (e.empty()) throw config_error(where + ": empty array element");
  return out;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (c.entries_.count(key))
      throw config_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    c.entries_[key] = value;
    c.lines_[key] = lineno;
  }
  return c;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

void Config::fail(const std::string& key, const std::string& what) const {
  auto it = lines_.find(key);
  std::string loc = origin_;
  if (it != lines_.end()) loc += ":" + std::to_string(it->second);
  throw config_error(loc + ": key '" + key + "': " + what);
}

std::string Config::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw config_error(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_string_or(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw config_error(origin_ + ": missing required key '" + key + "'");
  try {
    return parse_number(it->second, "");
  } catch (const config_error& e) {
    fail(key, e.what());
  }
}

double Config::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long Config::get_int(const std::string& key) const {
  double v = get_double(key);
  long long i = static_cast<long long>(v);
  if (static_cast<double>(i) != v) fail(key, "expected integer");
  return i;
}

long long Config::get_int_or(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::vector<double> Config::get_double_array(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw config_error(origin_ + ": missing required key '" + key + "'");
  std::vector<double> out;
  try {
    for (const auto& e : split_array(it->second, "")) out.push_back(parse_number(e, ""));
  } catch (const config_error& e) {
    fail(key, e.what());
  }
  return out;
}

std::vector<long long> Config::get_int_array(const std::string& key) const {
  std::vector<long long> out;
  for (double v : get_double_array(key)) {
    long long i = static_cast<long long>(v);
    if (static_cast<double>(i) != v) fail(key, "expected integer array");
    out.push_back(i);
  }
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

std::uint64_t Config::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [k, v] : entries_) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  return h;
}

std::string Config::digest_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest()));
  return buf;
}

}  // namespace wgm
