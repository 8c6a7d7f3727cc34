#include "pulsedrf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace pulsedrf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  const auto pos = s.find_first_of("#;");
  return pos == std::string::npos ? s : s.substr(0, pos);
}

bool parse_double(const std::string& s, double& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

Config Config::parse(const std::string& text, const std::string& source) {
  Config c;
  c.source_ = source;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(source, line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) throw ConfigError(source, line, "empty section name");
      if (c.sections_.count(section)) throw ConfigError(source, line, "duplicate section [" + section + "]");
      c.sections_[section];
      c.section_lines_[section] = line;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value'");
    if (section.empty()) throw ConfigError(source, line, "key outside of any [section]");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw ConfigError(source, line, "missing key before '='");
    auto& keys = c.sections_[section];
    if (keys.count(key)) throw ConfigError(source, line, "duplicate key '" + key + "' in [" + section + "]");
    keys[key] = Entry{trim(s.substr(eq + 1)), line};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open configuration file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

bool Config::has_section(const std::string& section) const { return sections_.count(section) > 0; }

bool Config::has(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

int Config::line_of(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  if (it == sections_.end()) return 0;
  const auto kt = it->second.find(key);
  if (kt != it->second.end()) return kt->second.line;
  return section_lines_.at(section);
}

void Config::fail(const std::string& section, const std::string& key, const std::string& message) const {
  const std::string where = key.empty() ? "[" + section + "]" : "[" + section + "] " + key;
  throw ConfigError(source_, line_of(section, key), where + ": " + message);
}

std::optional<std::string> Config::text(const std::string& section, const std::string& key) const {
  if (!has(section, key)) return std::nullopt;
  return sections_.at(section).at(key).value;
}

std::optional<double> Config::number(const std::string& section, const std::string& key) const {
  const auto t = text(section, key);
  if (!t) return std::nullopt;
  double v = 0.0;
  if (t->empty() || !parse_double(*t, v)) fail(section, key, "expected a number, got '" + *t + "'");
  return v;
}

std::optional<long long> Config::integer(const std::string& section, const std::string& key) const {
  const auto t = text(section, key);
  if (!t) return std::nullopt;
  long long v = 0;
  const auto r = std::from_chars(t->data(), t->data() + t->size(), v);
  if (t->empty() || r.ec != std::errc() || r.ptr != t->data() + t->size())
    fail(section, key, "expected an integer, got '" + *t + "'");
  return v;
}

std::optional<bool> Config::flag(const std::string& section, const std::string& key) const {
  const auto t = text(section, key);
  if (!t) return std::nullopt;
  std::string v = *t;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  fail(section, key, "expected true or false, got '" + *t + "'");
}

std::optional<std::vector<double>> Config::numbers(const std::string& section, const std::string& key) const {
  const auto t = text(section, key);
  if (!t) return std::nullopt;
  std::vector<double> out;
  if (t->empty()) return out;
  std::stringstream ss(*t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    double v = 0.0;
    if (item.empty() || !parse_double(item, v)) fail(section, key, "malformed list element '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void Config::reject_unknown(const std::map<std::string, std::set<std::string>>& schema) const {
  for (const auto& [section, keys] : sections_) {
    const auto it = schema.find(section);
    if (it == schema.end())
      throw ConfigError(source_, section_lines_.at(section), "unknown section [" + section + "]");
    for (const auto& [key, entry] : keys)
      if (!it->second.count(key))
        throw ConfigError(source_, entry.line, "unknown key '" + key + "' in [" + section + "]");
  }
}

}  // namespace pulsedrf
