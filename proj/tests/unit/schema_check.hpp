// Minimal JSON Schema checker for the keywords used by the shipped schemas.
#pragma once
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace schema_check {

using nlohmann::json;

inline json load(const std::string& dir, const std::string& name) {
  std::ifstream in(dir + "/" + name);
  if (!in) throw std::runtime_error("cannot open schema " + dir + "/" + name);
  return json::parse(in);
}

inline bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<long long>(v.get<double>()));
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  return false;
}

inline void validate(const json& v, const json& schema, const std::string& dir, const std::string& path,
                     std::vector<std::string>& errors) {
  if (schema.contains("$ref")) {
    validate(v, load(dir, schema["$ref"].get<std::string>()), dir, path, errors);
    return;
  }
  if (schema.contains("type")) {
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || has_type(v, t.get<std::string>());
    } else {
      ok = has_type(v, schema["type"].get<std::string>());
    }
    if (!ok) {
      errors.push_back(path + ": wrong type");
      return;
    }
  }
  if (schema.contains("const") && v != schema["const"]) errors.push_back(path + ": const mismatch");
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == v;
    if (!found) errors.push_back(path + ": not in enum");
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) errors.push_back(path + ": below minimum");
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) errors.push_back(path + ": above maximum");
    if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>())
      errors.push_back(path + ": not above exclusiveMinimum");
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) errors.push_back(path + ": too few items");
    if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>()) errors.push_back(path + ": too many items");
    if (schema.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i) validate(v[i], schema["items"], dir, path + "/" + std::to_string(i), errors);
  }
  if (v.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema["required"])
        if (!v.contains(key.get<std::string>())) errors.push_back(path + ": missing " + key.get<std::string>());
    const json props = schema.value("properties", json::object());
    for (const auto& [key, value] : v.items()) {
      if (props.contains(key)) {
        validate(value, props[key], dir, path + "/" + key, errors);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
        errors.push_back(path + ": unexpected property " + key);
      }
    }
  }
}

inline std::vector<std::string> check(const json& v, const std::string& dir, const std::string& schema_name) {
  std::vector<std::string> errors;
  validate(v, load(dir, schema_name), dir, "", errors);
  return errors;
}

}  // namespace schema_check
