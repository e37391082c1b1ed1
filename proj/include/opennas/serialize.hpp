#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "opennas/arch.hpp"

namespace opennas {

// Canonical architecture document:
//   {"input_shape":[H,W,C],"num_classes":K,"layers":[{"kind":"conv","out_channels":N,"kernel":K},...]}
// Keys are emitted in exactly this order with no whitespace, so byte equality
// of two documents implies architecture equality.
std::string serialize(const Architecture& arch);

// Throws ParseError (with byte offset) on malformed text and SchemaError on
// missing fields, wrong types or unknown layer kinds.
Architecture deserialize(std::string_view document);

nlohmann::ordered_json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& doc);

} // namespace opennas
