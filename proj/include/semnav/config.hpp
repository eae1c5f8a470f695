#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace semnav {

// Plain-text "key = value" configuration.  One pair per line; '#' starts a
// comment; blank lines are ignored.  Malformed lines, empty values, and
// duplicate keys raise ConfigError.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load_file(const std::string& path);

  bool has(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

  // Typed accessors fall back to the given default when the key is absent
  // and raise ConfigError when the value does not parse.
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // by ','

  // Every present key must be in `known`; unknown keys raise ConfigError
  // naming the offender (typo guard).
  void require_known_keys(std::span<const std::string> known) const;

  // Canonical "key = value" rendering, sorted by key; embedded in manifests
  // so a run can be reproduced from its artifacts alone.
  std::string canonical_text() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace semnav
