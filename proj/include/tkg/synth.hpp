#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkg/cti.hpp"
#include "tkg/events.hpp"
#include "tkg/graph.hpp"

namespace tkg {

/// SplitMix64 (Steele, Lea, Flood 2014): state += 0x9E3779B97F4A7C15, then
/// the standard xor-shift-multiply finalizer. below(n) is next() % n and
/// unit() is (next() >> 11) * 2^-53, so other implementations can reproduce
/// fixtures exactly.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();
    std::uint64_t below(std::uint64_t n);
    double unit();

private:
    std::uint64_t state_;
};

struct TemplateNode {
    std::string name;
    NodeKind kind = NodeKind::Process;
    std::string label;  // may contain {user} and {rand8}
};

struct TemplateEdge {
    std::string src;
    std::string dst;
    Relation relation = Relation::ProcessStart;
    std::int64_t offset_ms = 0;
};

struct ReportFixture {
    std::string report_id;
    std::string source_name;
    std::string text;         // may reference {node:<name>}
    nlohmann::json answer;    // model answer replayed by the fixture client
};

struct TechniqueTemplate {
    std::string technique_id;
    std::string procedure_id;
    std::string initial;  // name of the first attack process
    std::vector<TemplateNode> nodes;
    std::vector<TemplateEdge> edges;
    std::optional<std::string> script;  // may reference {node:<name>}
    std::optional<ReportFixture> report;
};

/// Throws SchemaError when names are not unique, edges reference unknown
/// nodes, a relation does not fit its target kind or the initial node is
/// not a Process.
TechniqueTemplate template_from_json(const nlohmann::json& doc);
TechniqueTemplate read_template(const std::filesystem::path& path);

struct NoiseProfile {
    double events_per_second = 30'000;
    std::map<EventType, double> mix = {{EventType::Process, 0.05}, {EventType::Thread, 0.10},
                                       {EventType::File, 0.40},    {EventType::Registry, 0.30},
                                       {EventType::Internet, 0.05}, {EventType::Image, 0.10}};
    std::size_t event_count = 5'000;
    /// Share of noise (inside the attack window) performed by attack processes.
    double chain_noise_fraction = 0.02;
    /// Share of noise using names outside the kept relation table.
    double dropped_name_fraction = 0.15;
    std::size_t benign_processes = 24;
    std::size_t vocabulary_per_type = 200;
};

/// Throws SchemaError when the mix does not sum to 1 or counts are invalid.
NoiseProfile noise_profile_from_json(const nlohmann::json& doc);
nlohmann::json noise_profile_to_json(const NoiseProfile& profile);

struct RunOptions {
    /// Also writes one attack object into the benign capture, so the
    /// whitelist hides it and only static analysis can restore it.
    bool whitelist_leak = false;
    std::int64_t t0 = 1'700'000'000'000'000'000;
};

struct GeneratedRun {
    std::vector<AuditEvent> events;
    RunMeta meta;
    TechniqueGraph truth;
    std::vector<AuditEvent> benign;
    std::size_t injected_event_count = 0;
    std::size_t benign_object_count = 0;  // distinct (kind, object) in the benign capture
    std::optional<std::string> leaked_object;
    std::optional<std::string> script;
    std::optional<ReportDoc> report;
    std::optional<std::string> model_answer;
};

GeneratedRun generate_run(const TechniqueTemplate& tmpl, const NoiseProfile& noise, std::uint64_t seed,
                          const RunOptions& options = {});

/// events.jsonl, meta.json, truth.gml, benign.jsonl, whitelist.json and,
/// when present, script.ps1, reports/<id>.json and store/<hash>.json.
void write_run(const GeneratedRun& run, const std::filesystem::path& dir);

struct EmbeddedRun {
    TechniqueGraph prov;
    TechniqueGraph truth;
    std::map<NodeId, NodeId> injection;  // truth node -> provenance node (attacker excluded)
};

/// A provenance graph of about `total_nodes` nodes: benign process trees
/// (including look-alike processes) plus one instantiated technique.
EmbeddedRun embed_technique(const TechniqueTemplate& tmpl, std::uint64_t seed, std::size_t total_nodes = 60);

}  // namespace tkg
