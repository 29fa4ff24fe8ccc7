#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crs {

/// Error thrown by the structured-text parsers (configs, tracks, params).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ordered key/value document backing the crs-config-v1 / crs-track-v1 /
/// crs-params-v1 text formats. One `key: value` pair per line, `#` comments,
/// order preserved so that parse -> serialize -> parse is lossless.
class KvDoc {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, bool value);

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;

  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_num(const std::string& key) const;
  double get_num(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string serialize() const;
  static KvDoc parse(const std::string& text);
  static KvDoc load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Canonical shortest-round-trip formatting for doubles, used everywhere a
/// float is written to a file so identical runs produce identical bytes.
std::string format_double(double v);

}  // namespace crs
