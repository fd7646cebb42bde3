#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "avobj/common.hpp"

namespace avobj {

using Json = nlohmann::json;

// Parse a JSON config file. Throws config_error on syntax errors and
// data_error if the file is missing.
Json load_json_file(const std::string& path);

void save_json_file(const std::string& path, const Json& j, int indent = 2);

// Apply a "dotted.path=value" override onto a config object. Values parse as
// JSON when possible (numbers, bools, arrays) and fall back to strings.
void apply_override(Json& config, const std::string& assignment);

// Deep-merge overlay into base: objects merge recursively, everything else
// is replaced by the overlay value.
void merge_config(Json& base, const Json& overlay);

}  // namespace avobj
