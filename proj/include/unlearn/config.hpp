#pragma once

// Config files are either JSON or flat `key = value` lines:
//
//   # comment
//   lambda = 0.5
//   n = [250, 500, 1000]
//   mechanisms = ["gaussian", "laplace"]
//   loss = logistic
//
// Values are parsed as JSON when possible and as bare strings otherwise.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "unlearn/errors.hpp"

namespace unlearn {

namespace detail {
inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline nlohmann::json parse_key_value(std::istream& is) {
  nlohmann::json out = nlohmann::json::object();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw schema_error("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(t.substr(0, eq));
    auto val = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw schema_error("config line " + std::to_string(lineno) + ": empty key");
    auto parsed = nlohmann::json::parse(val, nullptr, false);
    if (parsed.is_discarded()) {
      // bare words inside lists: [gaussian, laplace]
      if (val.size() >= 2 && val.front() == '[' && val.back() == ']') {
        nlohmann::json arr = nlohmann::json::array();
        std::stringstream ss(val.substr(1, val.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
          auto it = detail::trim(item);
          if (it.empty()) continue;
          auto pj = nlohmann::json::parse(it, nullptr, false);
          arr.push_back(pj.is_discarded() ? nlohmann::json(it) : pj);
        }
        parsed = arr;
      } else {
        parsed = val;
      }
    }
    out[key] = parsed;
  }
  return out;
}

inline nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw schema_error("invalid JSON config " + path.string() + ": " + e.what());
    }
  }
  std::istringstream ss(text);
  return parse_key_value(ss);
}

}  // namespace unlearn
