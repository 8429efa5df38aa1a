#include "zipmo/schema.hpp"

#include <cmath>

#include <json.hpp>

#include "zipmo/errors.hpp"

namespace zipmo::schema {

using nlohmann::json;

namespace {

std::string member(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") {
    if (v.is_number_integer()) return true;
    if (!v.is_number_float()) return false;
    const double d = v.get<double>();
    return std::isfinite(d) && std::floor(d) == d;
  }
  throw ArgumentError("schema uses unsupported type '" + t + "'");
}

std::string where(const std::string& path) { return path.empty() ? "<root>" : path; }

void check(const json& v, const json& s, const std::string& path) {
  if (s.contains("type")) {
    const auto& t = s["type"];
    bool ok = false;
    std::string names;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
      names = t.get<std::string>();
    } else {
      for (const auto& e : t) {
        ok = ok || has_type(v, e.get<std::string>());
        names += (names.empty() ? "" : " or ") + e.get<std::string>();
      }
    }
    if (!ok) throw SchemaError(where(path), "expected " + names);
  }
  if (s.contains("enum")) {
    bool ok = false;
    for (const auto& e : s["enum"]) ok = ok || e == v;
    if (!ok) throw SchemaError(where(path), "value " + v.dump() + " is not one of " + s["enum"].dump());
  }
  if (v.is_number()) {
    const double d = v.get<double>();
    if (s.contains("minimum") && d < s["minimum"].get<double>())
      throw SchemaError(where(path), "must be >= " + s["minimum"].dump());
    if (s.contains("exclusiveMinimum") && d <= s["exclusiveMinimum"].get<double>())
      throw SchemaError(where(path), "must be > " + s["exclusiveMinimum"].dump());
    if (s.contains("maximum") && d > s["maximum"].get<double>())
      throw SchemaError(where(path), "must be <= " + s["maximum"].dump());
  }
  if (v.is_string() && s.contains("minLength") &&
      v.get<std::string>().size() < s["minLength"].get<std::size_t>())
    throw SchemaError(where(path), "string shorter than " + s["minLength"].dump());
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
      throw SchemaError(where(path), "needs at least " + s["minItems"].dump() + " items");
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
      throw SchemaError(where(path), "allows at most " + s["maxItems"].dump() + " items");
    if (s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], path + "[" + std::to_string(i) + "]");
  }
  if (v.is_object()) {
    if (s.contains("required"))
      for (const auto& r : s["required"]) {
        const auto key = r.get<std::string>();
        if (!v.contains(key)) throw SchemaError(member(path, key), "required field missing");
      }
    const json* props = s.contains("properties") ? &s["properties"] : nullptr;
    const bool closed = s.contains("additionalProperties") && s["additionalProperties"].is_boolean() &&
                        !s["additionalProperties"].get<bool>();
    for (const auto& [key, val] : v.items()) {
      if (props && props->contains(key))
        check(val, (*props)[key], member(path, key));
      else if (closed)
        throw SchemaError(member(path, key), "unknown field");
    }
  }
}

}  // namespace

std::string_view builtin(std::string_view name) {
  for (const auto& b : builtins())
    if (b.name == name) return b.text;
  throw ArgumentError("no built-in schema named '" + std::string(name) + "'");
}

void validate(const std::string& doc, std::string_view schema, const std::string& root) {
  json v;
  try {
    v = json::parse(doc);
  } catch (const json::exception& e) {
    throw ParseError(std::string("document is not valid JSON: ") + e.what());
  }
  check(v, json::parse(schema), root);
}

}  // namespace zipmo::schema
