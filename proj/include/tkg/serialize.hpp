#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tkg/graph.hpp"

namespace tkg {

/// GML document. The attacker node is written first; the remaining nodes
/// and all edges keep their order. Lossless with respect to import_gml.
std::string export_gml(const TechniqueGraph& graph);

/// Inverse of export_gml. Throws ParseError (with line) on malformed text
/// and SchemaError on unknown kinds, relations or missing fields.
TechniqueGraph import_gml(std::string_view text);

nlohmann::json graph_to_json(const TechniqueGraph& graph);
TechniqueGraph graph_from_json(const nlohmann::json& doc);

/// Graphviz rendering for inspection only; not read back.
std::string export_dot(const TechniqueGraph& graph);

TechniqueGraph read_gml_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tkg
