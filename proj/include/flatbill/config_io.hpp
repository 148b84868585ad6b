#pragma once

#include <string>

#include <json.hpp>

#include "flatbill/geometry.hpp"

namespace flatbill {

// Strict: every key must be a TableConfig field; anything else throws
// Error(InvalidConfig) naming the key.
TableConfig table_config_from_json(const nlohmann::json& j);
nlohmann::json table_config_to_json(const TableConfig& c);

// Applies "key=value" to a config json, parsing value as JSON when possible
// and as a plain string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace flatbill
