#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tkg/graph.hpp"

namespace tkg {

struct AlignConfig {
    double similarity_threshold = 0.6;
    double node_weight = 0.5;  // edge weight is 1 - node_weight
    /// Upper bound on seed pairs tried; the best-scoring alignment wins.
    std::size_t max_seeds = 64;
};

struct AlignmentResult {
    std::string technique_id;
    double score = 0.0;
    std::map<NodeId, NodeId> node_map;  // technique node -> provenance node
    std::size_t matched_edges = 0;
    std::optional<std::pair<std::int64_t, std::int64_t>> window;
};

nlohmann::json alignment_to_json(const AlignmentResult& result);

/// Greedy seeded alignment. Attacker nodes and their edges are not scored.
AlignmentResult align_technique(const TechniqueGraph& tech, const TechniqueGraph& prov, const AlignConfig& cfg = {});

inline constexpr double kDefaultDetectionThreshold = 0.7;

/// Results scoring at least `threshold`, best first, ties by technique id.
std::vector<AlignmentResult> detect_techniques(const TechniqueGraph& prov, std::span<const TechniqueGraph> kb,
                                               double threshold = kDefaultDetectionThreshold,
                                               const AlignConfig& cfg = {});

struct ChainLink {
    std::size_t from = 0;  // step indices
    std::size_t to = 0;
    std::vector<NodeId> shared_nodes;
};

struct AttackChain {
    std::vector<AlignmentResult> steps;  // ordered by window start
    std::vector<ChainLink> links;        // consecutive steps sharing provenance nodes
};

AttackChain build_attack_chain(std::vector<AlignmentResult> detections, const TechniqueGraph& prov);

nlohmann::json attack_chain_to_json(const AttackChain& chain, const TechniqueGraph& prov);

}  // namespace tkg
