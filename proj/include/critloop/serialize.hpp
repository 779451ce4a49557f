#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

#include "critloop/core.hpp"

namespace critloop {

using json = nlohmann::json;

/// A record on disk does not match the schema or breaks a type invariant.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Nested encodings, no schema_version.
json to_json(const Query& q);
json to_json(const ReasoningPath& p);
json to_json(const Critique& c);
json to_json(const RefinementRecord& r);
json to_json(const InteractionHistory& h);

Query query_from_json(const json& j);
ReasoningPath path_from_json(const json& j);
Critique critique_from_json(const json& j);
RefinementRecord refinement_from_json(const json& j);
InteractionHistory history_from_json(const json& j);

/// Top-level record: `body` with "schema_version" added.
json make_record(json body);
/// Throws SchemaError unless j is an object with schema_version == 1.
void check_record(const json& j);

/// One compact JSON line, keys sorted, no trailing newline.
std::string dump_line(const json& j);
json parse_line(const std::string& line);

// Field helpers that raise SchemaError with the field name.
const json& field(const json& j, const char* name);
std::string str_field(const json& j, const char* name);
long long int_field(const json& j, const char* name);
double num_field(const json& j, const char* name);
bool bool_field(const json& j, const char* name);

}  // namespace critloop
