#pragma once

// A small JSON-schema subset: type, properties, required,
// additionalProperties (boolean), items, enum, minimum/maximum,
// exclusiveMinimum, minItems/maxItems, minLength.

#include <string>
#include <string_view>
#include <vector>

namespace zipmo::schema {

struct Builtin {
  std::string_view name;
  std::string_view text;
};

/// Schemas shipped in the repository's schemas/ directory, keyed by file
/// stem (e.g. "sample_request").
const std::vector<Builtin>& builtins();
/// ArgumentError for an unknown name.
std::string_view builtin(std::string_view name);

/// Throws SchemaError(path, reason) at the first violation; the path uses
/// dots for members and [i] for array elements, e.g. "pokes[1].t_star".
/// ParseError when `doc` is not JSON.
void validate(const std::string& doc, std::string_view schema, const std::string& root = "");

}  // namespace zipmo::schema
