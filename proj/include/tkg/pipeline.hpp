#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkg/log_extract.hpp"
#include "tkg/merge.hpp"
#include "tkg/model_client.hpp"
#include "tkg/script_ast.hpp"

namespace tkg {

inline constexpr int kPipelineSchemaVersion = 1;

struct RunInput {
    std::filesystem::path events;
    std::filesystem::path meta;
    std::optional<std::filesystem::path> script;  // PowerShell source
    std::optional<std::filesystem::path> ast;     // pre-parsed AST JSON
};

struct PipelineConfig {
    int schema_version = kPipelineSchemaVersion;
    std::filesystem::path output_dir;
    std::filesystem::path whitelist;
    std::vector<RunInput> runs;
    std::optional<std::filesystem::path> reports_dir;
    MergeConfig merge;
    ExtractConfig extract;
    double detection_threshold = 0.7;
    ClientConfig client;
    std::size_t workers = 0;  // 0: one per hardware thread
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PipelineConfig read_pipeline_config(const std::filesystem::path& path);

/// Checks everything that can be checked before work starts: schema
/// version, whitelist and run files present, merge and client settings.
void validate_pipeline_config(const PipelineConfig& cfg);

/// Static candidates from a script source or a serialized AST.
std::vector<Candidate> static_candidates(const RunInput& run);

/// extract_technique_graph plus static supplementation when the run has a
/// script or AST.
TechniqueGraph extract_run(const RunInput& run, const Whitelist& whitelist, const ExtractConfig& cfg = {});

struct Artifact {
    std::string path;  // relative to the output directory, '/' separated
    std::string sha256;
};

struct StageError {
    std::string stage;
    std::string technique;
    std::string message;
    bool fatal = true;
};

struct Manifest {
    int schema_version = kPipelineSchemaVersion;
    std::vector<Artifact> artifacts;  // sorted by path
    std::vector<StageError> errors;
    std::vector<std::string> warnings;
    std::vector<std::string> techniques;

    bool ok() const;
};

nlohmann::json manifest_to_json(const Manifest& manifest);

/// Runs every technique found in the config through extraction, merging
/// and CTI parsing, writes the artifacts and `manifest.json` into the
/// output directory and returns the manifest. Per-technique failures are
/// recorded, not thrown. `transport` overrides the live client's network.
Manifest run_pipeline(const PipelineConfig& cfg, std::shared_ptr<Transport> transport = nullptr);

}  // namespace tkg
