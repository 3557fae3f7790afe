#include "altsfm/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace altsfm {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key)) throw std::runtime_error(origin + ": duplicate key '" + key + "'");
    kv.values_[key] = value;
  }
  return kv;
}

std::string KeyValueFile::get_string(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error(origin_ + ": missing required key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) {
  if (!has(key)) return fallback;
  return get_string(key);
}

double KeyValueFile::get_double(const std::string& key) {
  const std::string s = get_string(key);
  size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(origin_ + ": key '" + key + "' is not a number: " + s);
  }
  if (pos != s.size()) throw std::runtime_error(origin_ + ": key '" + key + "' has trailing junk: " + s);
  return v;
}

double KeyValueFile::get_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  return get_double(key);
}

int KeyValueFile::get_int(const std::string& key) {
  const std::string s = get_string(key);
  size_t pos = 0;
  long v;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(origin_ + ": key '" + key + "' is not an integer: " + s);
  }
  if (pos != s.size()) throw std::runtime_error(origin_ + ": key '" + key + "' has trailing junk: " + s);
  return static_cast<int>(v);
}

int KeyValueFile::get_int(const std::string& key, int fallback) {
  if (!has(key)) return fallback;
  return get_int(key);
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const std::string s = get_string(key);
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::runtime_error(origin_ + ": key '" + key + "' is not a boolean: " + s);
}

void KeyValueFile::require_all_consumed() const {
  std::string leftovers;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) leftovers += (leftovers.empty() ? "" : ", ") + key;
  if (!leftovers.empty()) throw std::runtime_error(origin_ + ": unknown keys: " + leftovers);
}

}  // namespace altsfm
