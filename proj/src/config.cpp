#include "crs/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace crs {

std::string format_double(double v) {
  char buf[40];
  // shortest representation that round-trips a double
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void KvDoc::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KvDoc::set(const std::string& key, double value) { set(key, format_double(value)); }
void KvDoc::set(const std::string& key, long long value) { set(key, std::to_string(value)); }
void KvDoc::set(const std::string& key, bool value) { set(key, value ? std::string("true") : std::string("false")); }

bool KvDoc::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

std::optional<std::string> KvDoc::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::string KvDoc::get_str(const std::string& key) const {
  auto v = get(key);
  if (!v) throw ParseError("missing key: " + key);
  return *v;
}

std::string KvDoc::get_str(const std::string& key, const std::string& fallback) const {
  auto v = get(key);
  return v ? *v : fallback;
}

double KvDoc::get_num(const std::string& key) const {
  const std::string s = get_str(key);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("key '" + key + "' is not a number: " + s);
  return v;
}

double KvDoc::get_num(const std::string& key, double fallback) const {
  return has(key) ? get_num(key) : fallback;
}

long long KvDoc::get_int(const std::string& key) const {
  const std::string s = get_str(key);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError("key '" + key + "' is not an integer: " + s);
  return v;
}

long long KvDoc::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KvDoc::get_bool(const std::string& key) const {
  const std::string s = get_str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ParseError("key '" + key + "' is not a boolean: " + s);
}

bool KvDoc::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::string KvDoc::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) out << k << ": " << v << "\n";
  return out.str();
}

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}
}  // namespace

KvDoc KvDoc::parse(const std::string& text) {
  KvDoc doc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t colon = t.find(':');
    if (colon == std::string::npos)
      throw ParseError("line " + std::to_string(lineno) + ": expected 'key: value'");
    std::string key = trim(t.substr(0, colon));
    std::string value = trim(t.substr(colon + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
    doc.entries_.emplace_back(key, value);
  }
  return doc;
}

KvDoc KvDoc::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

void KvDoc::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write file: " + path);
  f << serialize();
}

}  // namespace crs
