#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tkg {

enum class NodeKind { Attacker, Process, Thread, File, Registry, Network, Image };

std::string_view to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(std::string_view name);

/// The audited event relations; one per (event type, event name) row that
/// survives event selection.
enum class Relation {
    ProcessStart,
    ProcessDCStart,
    ThreadStart,
    ThreadDCStart,
    FileCreate,
    FileRead,
    FileWrite,
    FileRename,
    RegistryQuery,
    RegistryCreate,
    RegistrySetValue,
    NetReceive,
    NetSend,
    ImageLoad,
    ImageDCStart,
};

std::string_view to_string(Relation relation);
std::optional<Relation> relation_from_string(std::string_view name);

/// Either one of the audited relations or a free-text verb taken from a
/// threat report.
class EdgeRelation {
public:
    EdgeRelation(Relation relation) : relation_(relation) {}  // NOLINT(implicit)
    static EdgeRelation text(std::string verb);

    bool is_text() const noexcept { return !relation_.has_value(); }
    const std::optional<Relation>& relation() const noexcept { return relation_; }
    const std::string& verb() const noexcept { return verb_; }

    /// Serialized token: the relation name, or "text:" followed by the verb.
    std::string token() const;
    static EdgeRelation from_token(std::string_view token);

    friend bool operator==(const EdgeRelation&, const EdgeRelation&) = default;
    friend auto operator<=>(const EdgeRelation&, const EdgeRelation&) = default;

private:
    EdgeRelation() = default;
    std::optional<Relation> relation_;
    std::string verb_;
};

/// True when two relation sets share a member. A free-text verb on either
/// side matches any relation.
bool relations_compatible(const std::set<EdgeRelation>& a, const std::set<EdgeRelation>& b);

using NodeId = std::uint64_t;

struct KnowledgeNode {
    NodeId id = 0;
    NodeKind kind = NodeKind::Process;
    std::string label;
    std::set<std::string> extra_labels;
    std::set<std::string> provenance;
    bool generalized = false;
    bool common = false;

    friend bool operator==(const KnowledgeNode&, const KnowledgeNode&) = default;
};

struct KnowledgeEdge {
    NodeId src = 0;
    NodeId dst = 0;
    std::set<EdgeRelation> relations;
    std::vector<std::int64_t> timestamps;  // sorted, unique
    std::set<std::string> provenance;

    friend bool operator==(const KnowledgeEdge&, const KnowledgeEdge&) = default;
};

enum class SourceKind { Log, Static, Cti, MergedLog, MergedCti, Unified };

std::string_view to_string(SourceKind kind);
std::optional<SourceKind> source_kind_from_string(std::string_view name);

inline constexpr std::string_view kAttackerLabel = "attacker";

struct TechniqueGraph {
    std::string technique_id;
    std::optional<std::string> procedure_id;
    SourceKind source_kind = SourceKind::Log;
    std::vector<KnowledgeNode> nodes;
    std::vector<KnowledgeEdge> edges;

    const KnowledgeNode* find_node(NodeId id) const;
    KnowledgeNode* find_node(NodeId id);
    const KnowledgeNode* attacker() const;
    NodeId next_id() const;

    /// Appends a node with a fresh id and returns that id.
    NodeId add_node(KnowledgeNode node);

    /// Adds an edge or, when (src, dst) already has a record, unions the
    /// relations, timestamps and provenance into it. Self-loops are ignored.
    void add_edge(NodeId src, NodeId dst, const std::set<EdgeRelation>& relations,
                  const std::vector<std::int64_t>& timestamps = {},
                  const std::set<std::string>& provenance = {});

    friend bool operator==(const TechniqueGraph&, const TechniqueGraph&) = default;
};

/// MITRE technique id: T followed by four digits, optionally .NNN.
bool is_technique_id(std::string_view id);

inline constexpr std::uint32_t kUnreachable = std::numeric_limits<std::uint32_t>::max();

/// Hop distance from the attacker node, ignoring edge direction.
/// Throws MissingAttacker when the graph has none.
std::map<NodeId, std::uint32_t> compute_levels(const TechniqueGraph& graph);

/// Invariant violations, one human-readable line each. Empty means valid.
std::vector<std::string> validate(const TechniqueGraph& graph);

/// Throws InvalidGraph listing the violations when validate() is non-empty.
void require_valid(const TechniqueGraph& graph, std::string_view context);

/// Canonical form: nodes sorted by (kind, label, content, neighbourhood),
/// ids reassigned from 0, edges sorted by (src, dst).
TechniqueGraph canonicalize(const TechniqueGraph& graph);

/// Equality modulo node-id relabeling. Metadata (technique, procedure,
/// source kind) is ignored.
bool structurally_equal(const TechniqueGraph& a, const TechniqueGraph& b);

/// Merges `absorbed` into `survivor`: label sets, provenance and flags are
/// unioned, edges are rewired and self-loops dropped. `absorbed` is removed.
void merge_nodes(TechniqueGraph& graph, NodeId survivor, NodeId absorbed);

/// Drops `extra_labels` entries equal to the node's label.
void tidy_labels(KnowledgeNode& node);

}  // namespace tkg
