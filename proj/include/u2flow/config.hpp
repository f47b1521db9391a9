#pragma once
// Flat configuration files: [section] headers, one `key = value` pair per
// line, full-line comments starting with '#' or ';'. Values are plain text
// typed at read time; duplicate keys within a section are rejected so
// typos fail loudly.

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "u2flow/error.hpp"

namespace u2flow {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>") {
    ConfigFile cf;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3)
          throw FormatError(origin + ":" + std::to_string(lineno) +
                            ": malformed section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        if (section.empty())
          throw FormatError(origin + ":" + std::to_string(lineno) +
                            ": empty section name");
        cf.sections[section];  // a section may legitimately stay empty
        continue;
      }
      const size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": expected `key = value`");
      if (section.empty())
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": key before any [section]");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty())
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": empty key");
      auto& sec = cf.sections[section];
      if (sec.count(key))
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": duplicate key `" + key + "` in [" + section +
                          "]");
      sec[key] = value;
    }
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
  }

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) != 0;
  }

  std::string require_string(const std::string& sec,
                             const std::string& key) const {
    auto s = sections.find(sec);
    if (s == sections.end() || !s->second.count(key))
      throw FormatError("config: missing [" + sec + "] " + key);
    return s->second.at(key);
  }

  std::string get_string(const std::string& sec, const std::string& key,
                         const std::string& def) const {
    return has(sec, key) ? sections.at(sec).at(key) : def;
  }

  int64_t get_int(const std::string& sec, const std::string& key,
                  int64_t def) const {
    if (!has(sec, key)) return def;
    const std::string v = sections.at(sec).at(key);
    char* end = nullptr;
    const long long r = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      throw FormatError("config: [" + sec + "] " + key +
                        " is not an integer: `" + v + "`");
    return r;
  }

  double get_double(const std::string& sec, const std::string& key,
                    double def) const {
    if (!has(sec, key)) return def;
    const std::string v = sections.at(sec).at(key);
    char* end = nullptr;
    const double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      throw FormatError("config: [" + sec + "] " + key +
                        " is not a number: `" + v + "`");
    return r;
  }

  bool get_bool(const std::string& sec, const std::string& key,
                bool def) const {
    if (!has(sec, key)) return def;
    const std::string v = sections.at(sec).at(key);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw FormatError("config: [" + sec + "] " + key +
                      " is not a boolean: `" + v + "`");
  }
};

}  // namespace u2flow
