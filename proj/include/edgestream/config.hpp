#pragma once

// JSON forms of topic configs and helpers shared by scenario files, the
// replay metadata and the CLI. Durations are written in milliseconds
// (fractions allowed) under keys ending in _ms.

#include "edgestream/core.hpp"

#include <json.hpp>

#include <filesystem>

namespace edgestream {

using Json = nlohmann::json;

/// A configuration problem, located as file:line when known.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Parses a JSON file; syntax errors name the line and column.
Json load_json(const std::filesystem::path& path);
Json parse_json(std::string_view text, const std::string& origin);

Duration ms_to_duration(double ms);
double duration_to_ms(Duration d);
/// Optional duration under key (absent or null means unlimited).
Bound bound_ms(const Json& j, const char* key);

Json topic_to_json(const TopicConfig& t);
/// Throws ConfigError on unknown modes or invalid configs.
TopicConfig topic_from_json(const Json& j);

}  // namespace edgestream
