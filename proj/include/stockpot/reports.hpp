#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "stockpot/checkpoint.hpp"
#include "stockpot/geometry.hpp"
#include "stockpot/merge.hpp"
#include "stockpot/synthetic.hpp"

namespace stockpot {

// All report serialization is deterministic: ordered keys, fixed column
// order, shortest-round-trip numbers in JSON and %.17g in CSV.

nlohmann::ordered_json to_json(const SchemaReport& report);

nlohmann::ordered_json to_json(const GeometryReport& report);
std::string to_csv(const GeometryReport& report);

nlohmann::ordered_json to_json(const PropertyReport& report);
std::string to_csv(const PropertyReport& report);

nlohmann::ordered_json to_json(const RatioReport& report);
std::string to_csv(const RatioReport& report);

nlohmann::ordered_json to_json(const DistanceReport& report);
std::string to_csv(const DistanceReport& report);

nlohmann::ordered_json to_json(const ConcentrationReport& report);
std::string to_csv(const ConcentrationReport& report);

nlohmann::ordered_json to_json(const GreedyTrace& trace);

// Atomic file writes: temporary sibling plus rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& json);

}  // namespace stockpot
