#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tkg/error.hpp"
#include "tkg/graph.hpp"

namespace tkg {

class TechniqueMismatch : public Error {
public:
    using Error::Error;
};

class SourceMismatch : public Error {
public:
    using Error::Error;
};

class RoleError : public Error {
public:
    using Error::Error;
};

/// ECMAScript regex (case-insensitive) and its replacement ($1 style).
struct GeneralizationRule {
    std::string pattern;
    std::string replacement;

    friend bool operator==(const GeneralizationRule&, const GeneralizationRule&) = default;
};

/// Username path segment, deep registry tails and random temp file names.
std::vector<GeneralizationRule> default_generalization_rules();

struct MergeConfig {
    double prefix_cluster_threshold = 0.6;
    double similarity_threshold = 0.6;
    std::vector<GeneralizationRule> generalization_rules = default_generalization_rules();
};

/// Throws ConfigError on out-of-range thresholds or rules that do not compile.
void validate_merge_config(const MergeConfig& cfg);
MergeConfig merge_config_from_json(const nlohmann::json& doc);
nlohmann::json merge_config_to_json(const MergeConfig& cfg);

struct MergeLogEntry {
    NodeId survivor = 0;
    std::vector<std::string> absorbed_labels;

    friend bool operator==(const MergeLogEntry&, const MergeLogEntry&) = default;
};

struct MergeReport {
    std::string technique_id;
    std::size_t input_graph_count = 0;
    std::size_t nodes_before = 0;
    std::size_t nodes_after = 0;
    std::size_t edges_before = 0;
    std::size_t edges_after = 0;
    double entity_retention_pct = 0;
    double edge_retention_pct = 0;
    std::vector<MergeLogEntry> merged_node_log;

    friend bool operator==(const MergeReport&, const MergeReport&) = default;
};

/// after / before * 100, rounded half-up to three decimals with exact
/// integer arithmetic. 100 when `before` is 0.
double retention_pct(std::size_t after, std::size_t before);

nlohmann::json merge_report_to_json(const MergeReport& report);
MergeReport merge_report_from_json(const nlohmann::json& doc);

/// Applies every rule in order. Pure and idempotent for the default rules.
std::string generalize_label(std::string_view label, const std::vector<GeneralizationRule>& rules);

struct PrefixCluster {
    std::vector<std::string> members;  // sorted
    std::string representative;        // common prefix + "\.*", or the sole member

    friend bool operator==(const PrefixCluster&, const PrefixCluster&) = default;
};

/// Greedy complete-linkage clustering over sorted labels: a label joins the
/// first cluster whose every member shares a path-segment prefix of at
/// least `threshold` * max(segment count) with it.
std::vector<PrefixCluster> common_prefix_cluster(std::vector<std::string> labels, double threshold);

/// Shared leading path segments (case-insensitive).
std::size_t shared_prefix_segments(std::string_view a, std::string_view b);

/// 0 across kinds; otherwise the best pair over both label sets of
/// exact/pattern match (1.0), path-suffix containment (0.8) or token Jaccard.
double node_similarity(const KnowledgeNode& a, const KnowledgeNode& b);

/// Links every node unreachable from the attacker directly to it.
/// Returns the number of edges added.
std::size_t connect_orphans(TechniqueGraph& graph);

std::pair<TechniqueGraph, MergeReport> merge_same_source(std::span<const TechniqueGraph> graphs,
                                                         const MergeConfig& cfg = {});

/// Node ids in breadth-first order from the attacker (undirected, neighbours
/// by ascending id), then any unreachable nodes by id.
std::vector<NodeId> bfs_order(const TechniqueGraph& graph);

/// Additional-node -> base-node assignment used by merge_cross_source:
/// same kind, similarity >= threshold, maximum total similarity; among
/// optimal assignments lower BFS indices are preferred. Attackers always
/// map onto each other.
std::map<NodeId, NodeId> cross_source_matching(const TechniqueGraph& base, const TechniqueGraph& additional,
                                               const MergeConfig& cfg = {});

std::pair<TechniqueGraph, MergeReport> merge_cross_source(const TechniqueGraph& base,
                                                          const TechniqueGraph& additional,
                                                          const MergeConfig& cfg = {});

/// Maximum-weight assignment (Hungarian method). weights[i][j] <= 0 means
/// the pair is not allowed. Returns, per row, the assigned column or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

}  // namespace tkg
