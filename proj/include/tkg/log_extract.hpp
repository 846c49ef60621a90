#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tkg/events.hpp"
#include "tkg/graph.hpp"

namespace tkg {

class UnknownPid : public Error {
public:
    explicit UnknownPid(std::int64_t pid)
        : Error("initial pid " + std::to_string(pid) + " does not appear in the events") {}
};

class NoAttackEvents : public Error {
public:
    NoAttackEvents() : Error("no attack events survive filtering") {}
};

struct ExtractConfig {
    /// Events this close to the run window are still included (jitter).
    std::int64_t window_slack_ns = 100'000'000;
    /// Utility processes kept as nodes but flagged `common`.
    std::vector<std::string> common_processes = {"hostname.exe", "whoami.exe", "conhost.exe",
                                                 "ipconfig.exe", "systeminfo.exe"};
    /// Minimum number of sibling leaf files (same process, relations and
    /// extension) before they collapse into one node.
    std::size_t collapse_min = 5;
};

/// Relation for a kept (event type, event name) row; nullopt for every
/// other name (End, Open, Close, FileioCreate, ...).
std::optional<Relation> relation_for(EventType type, std::string_view event_name);

/// Node kind of the event's object.
NodeKind object_kind(EventType type);

/// Processes (and cross-process thread targets) descending from one pid.
struct ProcessChain {
    std::int64_t initial_pid = 0;
    std::set<std::int64_t> pids;
    std::map<std::int64_t, KnowledgeNode> nodes;  // Process or Thread nodes, id unset

    bool contains(std::int64_t pid) const { return pids.count(pid) > 0; }
};

ProcessChain build_process_chain(std::span<const AuditEvent> events, std::int64_t initial_pid,
                                 const ExtractConfig& cfg = {});

std::vector<AuditEvent> select_events(std::span<const AuditEvent> events, const ProcessChain& chain);

/// Normalized benign object labels per node kind.
struct Whitelist {
    std::map<NodeKind, std::set<std::string>> labels;

    bool contains(NodeKind kind, std::string_view object) const;
    std::size_t size() const;
};

Whitelist build_whitelist(std::span<const AuditEvent> benign_events);
std::vector<AuditEvent> filter_objects(std::span<const AuditEvent> events, const Whitelist& whitelist);

Whitelist read_whitelist(const std::filesystem::path& path);
void write_whitelist(const std::filesystem::path& path, const Whitelist& whitelist);
std::string whitelist_to_json_text(const Whitelist& whitelist);

/// Builds subject -> object edges for the given events under `chain`.
/// Adds the attacker node (id 0) with an edge to the initial process.
TechniqueGraph build_event_graph(std::span<const AuditEvent> events, const ProcessChain& chain,
                                 const std::string& technique_id, const std::string& procedure_id);

/// One edge per (src, dst); large families of sibling leaf files collapse
/// into one generalized node that records every collapsed label.
TechniqueGraph aggregate_edges(TechniqueGraph graph, const ExtractConfig& cfg = {});

TechniqueGraph extract_technique_graph(std::span<const AuditEvent> events, const RunMeta& meta,
                                       const Whitelist& whitelist, const ExtractConfig& cfg = {});

/// Whole-stream provenance graph (no chain or whitelist filtering), one
/// Process node per pid. Used as the search space for detection.
TechniqueGraph build_provenance_graph(std::span<const AuditEvent> events, const std::string& technique_id);

}  // namespace tkg
