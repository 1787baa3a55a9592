#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace cytonet {

/// Flat key=value text with dotted section keys. '#' starts a comment.
/// Unknown keys are hard errors at consumption time: every consumer declares
/// its key set and calls `finish()`.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig parse(const std::string& text);
  static KvConfig from_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback);

  /// Required variant: throws ConfigError naming the key when absent.
  std::string require_string(const std::string& key);

  /// Throws ConfigError listing every key that was never consumed.
  void finish() const;

  const std::map<std::string, std::string>& values() const { return values_; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  const std::string* lookup(const std::string& key);

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace cytonet
