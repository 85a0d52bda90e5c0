#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridlearn/grid.hpp"
#include "gridlearn/swingsim.hpp"

namespace gridlearn {

using Json = nlohmann::json;

/// Parses a JSON file; throws ParseError naming the path on failure.
Json read_json_file(const std::filesystem::path& path);
std::vector<Json> read_json_lines(const std::filesystem::path& path);

/// Writes through a temporary sibling file and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_json_lines(const std::filesystem::path& path, const std::vector<Json>& rows);

/// Required-field accessor; throws ParseError("<context>.<key>: ...").
const Json& require(const Json& obj, const std::string& key, const std::string& context);

Json grid_to_json(const GridNetwork& net);
GridNetwork grid_from_json(const Json& j);

Json fault_sample_to_json(const FaultSample& s);
FaultSample fault_sample_from_json(const Json& j, std::size_t node_count, std::size_t line_count);

Json path_sample_to_json(const PathSample& s);
PathSample path_sample_from_json(const Json& j, std::size_t node_count);

/// 64-bit FNV-1a of a string, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace gridlearn
