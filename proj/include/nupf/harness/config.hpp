#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nupf/core.hpp"
#include "nupf/nudging.hpp"

namespace nupf {

/// Flat `key = value` configuration. Lines starting with '#' are comments.
/// Keys keep their first-seen order so dumps are stable.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string body = trim(line);
      if (body.empty() || body[0] == '#') continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw Error(Errc::ConfigParse, origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
      }
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key.empty() || !valid_key(key)) {
        throw Error(Errc::ConfigParse, origin + ":" + std::to_string(lineno) + ": malformed key '" + key + "'");
      }
      if (c.has(key)) {
        throw Error(Errc::ConfigParse, origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
      c.set(key, value);
      c.lines_[key] = lineno;
    }
    c.origin_ = origin;
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] std::string dump() const {
    std::ostringstream out;
    for (const auto& k : order_) out << k << " = " << values_.at(k) << '\n';
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(Errc::Io, "cannot write config " + path);
    out << dump();
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!has(key)) order_.push_back(key);
    values_[key] = value;
  }

  [[nodiscard]] const std::vector<std::string>& keys() const noexcept { return order_; }

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? values_.at(key) : fallback;
  }
  [[nodiscard]] std::string require_string(const std::string& key) const {
    if (!has(key)) throw Error(Errc::ConfigParse, origin_ + ": missing required key '" + key + "'");
    return values_.at(key);
  }
  [[nodiscard]] double get_double(const std::string& key, double fallback) const {
    return has(key) ? wrap(key, [&] { return detail::parse_double(key, values_.at(key)); }) : fallback;
  }
  [[nodiscard]] long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? wrap(key, [&] { return detail::parse_int(key, values_.at(key)); }) : fallback;
  }
  [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const {
    return has(key) ? wrap(key, [&] { return detail::parse_bool(key, values_.at(key)); }) : fallback;
  }
  [[nodiscard]] std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(values_.at(key))) {
      out.push_back(wrap(key, [&] { return detail::parse_double(key, item); }));
    }
    return out;
  }
  [[nodiscard]] std::vector<int> get_ints(const std::string& key, std::vector<int> fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& item : split_list(values_.at(key))) {
      out.push_back(static_cast<int>(wrap(key, [&] { return detail::parse_int(key, item); })));
    }
    return out;
  }
  [[nodiscard]] std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
    return has(key) ? split_list(values_.at(key)) : fallback;
  }

  /// Keys under `prefix.`, with the prefix stripped.
  [[nodiscard]] std::map<std::string, std::string> section(const std::string& prefix) const {
    std::map<std::string, std::string> out;
    const std::string p = prefix + ".";
    for (const auto& k : order_) {
      if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = values_.at(k);
    }
    return out;
  }

  bool operator==(const Config& other) const { return order_ == other.order_ && values_ == other.values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  static bool valid_key(const std::string& k) {
    for (char ch : k) {
      const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                      ch == '_' || ch == '.' || ch == '-';
      if (!ok) return false;
    }
    return true;
  }

  static std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  template <typename F>
  auto wrap(const std::string& key, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const Error& e) {
      const auto it = lines_.find(key);
      const std::string where = it == lines_.end() ? origin_ : origin_ + ":" + std::to_string(it->second);
      throw Error(Errc::ConfigParse, where + ": " + std::string(e.what()));
    }
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string origin_ = "<config>";
};

/// Nudge settings read from `<prefix>.scheme`, `<prefix>.M`, `<prefix>.operator.*`.
inline NudgeConfig nudge_from_config(const Config& c, const std::string& prefix, NudgeConfig base) {
  apply_key_values(base, c.section(prefix));
  return base;
}

inline void nudge_to_config(Config& c, const std::string& prefix, const NudgeConfig& n) {
  for (const auto& [k, v] : to_key_values(n)) c.set(prefix + "." + k, v);
}

}  // namespace nupf
