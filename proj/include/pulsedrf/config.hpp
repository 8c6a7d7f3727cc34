#pragma once

// Sectioned key = value configuration text with typed, line-anchored access.
//
//   # comment
//   [section]
//   key = value            ; lists are comma separated

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace pulsedrf {

/// Schema or syntax violation; what() reads "<source>:<line>: message".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

class Config {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  const std::string& source() const { return source_; }
  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;
  /// Line of a key, or of its section header when the key is absent.
  int line_of(const std::string& section, const std::string& key = "") const;

  std::optional<std::string> text(const std::string& section, const std::string& key) const;
  std::optional<double> number(const std::string& section, const std::string& key) const;
  std::optional<long long> integer(const std::string& section, const std::string& key) const;
  std::optional<bool> flag(const std::string& section, const std::string& key) const;
  /// Present-but-empty lists are returned as empty vectors.
  std::optional<std::vector<double>> numbers(const std::string& section, const std::string& key) const;

  /// Raises ConfigError for any section or key not in `schema`.
  void reject_unknown(const std::map<std::string, std::set<std::string>>& schema) const;

  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& message) const;

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, int> section_lines_;
};

}  // namespace pulsedrf
