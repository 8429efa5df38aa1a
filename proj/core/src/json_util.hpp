#pragma once

// Typed access to JSON config objects with field-path errors.

#include <cmath>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "zipmo/errors.hpp"

namespace zipmo::detail {

using nlohmann::json;

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline json parse_json(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(path.empty() ? "$" : path, std::string("invalid JSON: ") + e.what());
  }
}

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "$" : path, "expected an object");
}

/// Rejects keys outside `allowed`.
inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  require_object(j, path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw SchemaError(join_path(path, it.key()), "unknown key");
  }
}

inline void read_int(const json& j, const char* key, const std::string& path, int& out,
                     long lo = -2147483647L, long hi = 2147483647L) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const auto p = join_path(path, key);
  if (!v.is_number_integer()) throw SchemaError(p, "expected an integer");
  const auto x = v.get<long>();
  if (x < lo || x > hi)
    throw SchemaError(p, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  out = static_cast<int>(x);
}

inline void read_u64(const json& j, const char* key, const std::string& path, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long>() < 0))
    throw SchemaError(join_path(path, key), "expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

inline void read_double(const json& j, const char* key, const std::string& path, double& out,
                        double lo = -HUGE_VAL, double hi = HUGE_VAL) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const auto p = join_path(path, key);
  if (!v.is_number()) throw SchemaError(p, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || x < lo || x > hi) throw SchemaError(p, "out of range");
  out = x;
}

inline void read_bool(const json& j, const char* key, const std::string& path, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) throw SchemaError(join_path(path, key), "expected a boolean");
  out = j.at(key).get<bool>();
}

inline void read_string(const json& j, const char* key, const std::string& path, std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw SchemaError(join_path(path, key), "expected a string");
  out = j.at(key).get<std::string>();
}

}  // namespace zipmo::detail
