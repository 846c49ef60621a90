#include "tkg/graph.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <numeric>
#include <regex>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "tkg/error.hpp"

namespace tkg {

namespace {

constexpr std::array<std::string_view, 7> kKindNames = {
    "Attacker", "Process", "Thread", "File", "Registry", "Network", "Image"};

constexpr std::array<std::string_view, 15> kRelationNames = {
    "ProcessStart",   "ProcessDCStart", "ThreadStart",      "ThreadDCStart", "FileCreate",
    "FileRead",       "FileWrite",      "FileRename",       "RegistryQuery", "RegistryCreate",
    "RegistrySetValue", "NetReceive",   "NetSend",          "ImageLoad",     "ImageDCStart"};

constexpr std::array<std::string_view, 6> kSourceNames = {"log",        "static",     "cti",
                                                          "merged-log", "merged-cti", "unified"};

constexpr std::string_view kTextPrefix = "text:";

}  // namespace

std::string_view to_string(NodeKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<NodeKind> node_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == name) {
            return static_cast<NodeKind>(i);
        }
    }
    return std::nullopt;
}

std::string_view to_string(Relation relation) {
    return kRelationNames[static_cast<std::size_t>(relation)];
}

std::optional<Relation> relation_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kRelationNames.size(); ++i) {
        if (kRelationNames[i] == name) {
            return static_cast<Relation>(i);
        }
    }
    return std::nullopt;
}

std::string_view to_string(SourceKind kind) { return kSourceNames[static_cast<std::size_t>(kind)]; }

std::optional<SourceKind> source_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
        if (kSourceNames[i] == name) {
            return static_cast<SourceKind>(i);
        }
    }
    return std::nullopt;
}

EdgeRelation EdgeRelation::text(std::string verb) {
    EdgeRelation r;
    r.verb_ = std::move(verb);
    return r;
}

std::string EdgeRelation::token() const {
    if (relation_) {
        return std::string(to_string(*relation_));
    }
    return std::string(kTextPrefix) + verb_;
}

EdgeRelation EdgeRelation::from_token(std::string_view token) {
    if (token.substr(0, kTextPrefix.size()) == kTextPrefix) {
        return text(std::string(token.substr(kTextPrefix.size())));
    }
    auto r = relation_from_string(token);
    if (!r) {
        throw SchemaError("unknown relation '" + std::string(token) + "'");
    }
    return *r;
}

bool relations_compatible(const std::set<EdgeRelation>& a, const std::set<EdgeRelation>& b) {
    if (a.empty() || b.empty()) {
        return false;
    }
    auto has_text = [](const std::set<EdgeRelation>& s) {
        return std::any_of(s.begin(), s.end(), [](const EdgeRelation& r) { return r.is_text(); });
    };
    if (has_text(a) || has_text(b)) {
        return true;
    }
    return std::any_of(a.begin(), a.end(), [&](const EdgeRelation& r) { return b.count(r) > 0; });
}

bool is_technique_id(std::string_view id) {
    static const std::regex kPattern(R"(T[0-9]{4}(\.[0-9]{3})?)");
    return std::regex_match(id.begin(), id.end(), kPattern);
}

const KnowledgeNode* TechniqueGraph::find_node(NodeId id) const {
    for (const auto& n : nodes) {
        if (n.id == id) {
            return &n;
        }
    }
    return nullptr;
}

KnowledgeNode* TechniqueGraph::find_node(NodeId id) {
    return const_cast<KnowledgeNode*>(std::as_const(*this).find_node(id));
}

const KnowledgeNode* TechniqueGraph::attacker() const {
    for (const auto& n : nodes) {
        if (n.kind == NodeKind::Attacker) {
            return &n;
        }
    }
    return nullptr;
}

NodeId TechniqueGraph::next_id() const {
    NodeId next = 0;
    for (const auto& n : nodes) {
        next = std::max(next, n.id + 1);
    }
    return next;
}

NodeId TechniqueGraph::add_node(KnowledgeNode node) {
    node.id = next_id();
    nodes.push_back(std::move(node));
    return nodes.back().id;
}

void TechniqueGraph::add_edge(NodeId src, NodeId dst, const std::set<EdgeRelation>& relations,
                              const std::vector<std::int64_t>& timestamps,
                              const std::set<std::string>& provenance) {
    if (src == dst) {
        return;
    }
    auto it = std::find_if(edges.begin(), edges.end(),
                           [&](const KnowledgeEdge& e) { return e.src == src && e.dst == dst; });
    if (it == edges.end()) {
        KnowledgeEdge e;
        e.src = src;
        e.dst = dst;
        edges.push_back(std::move(e));
        it = std::prev(edges.end());
    }
    it->relations.insert(relations.begin(), relations.end());
    it->provenance.insert(provenance.begin(), provenance.end());
    if (!timestamps.empty()) {
        it->timestamps.insert(it->timestamps.end(), timestamps.begin(), timestamps.end());
        std::sort(it->timestamps.begin(), it->timestamps.end());
        it->timestamps.erase(std::unique(it->timestamps.begin(), it->timestamps.end()),
                             it->timestamps.end());
    }
}

std::map<NodeId, std::uint32_t> compute_levels(const TechniqueGraph& graph) {
    const auto* attacker = graph.attacker();
    if (!attacker) {
        throw MissingAttacker();
    }
    std::unordered_map<NodeId, std::vector<NodeId>> adjacency;
    for (const auto& e : graph.edges) {
        adjacency[e.src].push_back(e.dst);
        adjacency[e.dst].push_back(e.src);
    }
    std::map<NodeId, std::uint32_t> levels;
    for (const auto& n : graph.nodes) {
        levels[n.id] = kUnreachable;
    }
    std::deque<NodeId> queue{attacker->id};
    levels[attacker->id] = 0;
    while (!queue.empty()) {
        NodeId current = queue.front();
        queue.pop_front();
        for (NodeId next : adjacency[current]) {
            auto it = levels.find(next);
            if (it != levels.end() && it->second == kUnreachable) {
                it->second = levels[current] + 1;
                queue.push_back(next);
            }
        }
    }
    return levels;
}

std::vector<std::string> validate(const TechniqueGraph& graph) {
    std::vector<std::string> out;
    if (!is_technique_id(graph.technique_id)) {
        out.push_back("technique id '" + graph.technique_id + "' is not a MITRE technique id");
    }
    std::set<NodeId> ids;
    std::size_t attackers = 0;
    for (const auto& n : graph.nodes) {
        if (!ids.insert(n.id).second) {
            out.push_back("duplicate node id " + std::to_string(n.id));
        }
        if (n.kind == NodeKind::Attacker) {
            ++attackers;
            if (n.label != kAttackerLabel) {
                out.push_back("node " + std::to_string(n.id) + ": attacker label must be 'attacker'");
            }
        } else if (n.label.empty()) {
            out.push_back("node " + std::to_string(n.id) + ": empty label");
        }
        if (n.extra_labels.count(n.label)) {
            out.push_back("node " + std::to_string(n.id) + ": extra_labels repeats the label");
        }
    }
    if (attackers > 1) {
        out.push_back("graph has " + std::to_string(attackers) + " attacker nodes");
    }
    const bool merged = graph.source_kind == SourceKind::MergedLog ||
                        graph.source_kind == SourceKind::MergedCti ||
                        graph.source_kind == SourceKind::Unified;
    if (merged && attackers == 0) {
        out.push_back("merged graph has no attacker node");
    }

    std::set<std::pair<NodeId, NodeId>> pairs;
    std::set<std::pair<NodeId, NodeId>> reported;
    for (const auto& e : graph.edges) {
        const std::string name = "edge " + std::to_string(e.src) + "→" + std::to_string(e.dst);
        if (!ids.count(e.src)) {
            out.push_back(name + ": unknown node " + std::to_string(e.src));
        }
        if (!ids.count(e.dst)) {
            out.push_back(name + ": unknown node " + std::to_string(e.dst));
        }
        if (e.src == e.dst) {
            out.push_back(name + ": self-loop");
        }
        if (e.relations.empty()) {
            out.push_back(name + ": no relations");
        }
        if (!pairs.insert({e.src, e.dst}).second && reported.insert({e.src, e.dst}).second) {
            out.push_back(name + ": duplicate edge record for this pair");
        }
        if (!std::is_sorted(e.timestamps.begin(), e.timestamps.end()) ||
            std::adjacent_find(e.timestamps.begin(), e.timestamps.end()) != e.timestamps.end()) {
            out.push_back(name + ": timestamps not sorted and unique");
        }
        const bool text = std::any_of(e.relations.begin(), e.relations.end(),
                                      [](const EdgeRelation& r) { return r.is_text(); });
        const bool cti = std::any_of(e.provenance.begin(), e.provenance.end(),
                                     [](const std::string& p) { return p.rfind("cti:", 0) == 0; });
        if (text && !cti) {
            out.push_back(name + ": free-text relation without cti provenance");
        }
    }

    if (merged && attackers == 1 && out.empty()) {
        auto levels = compute_levels(graph);
        for (const auto& [id, level] : levels) {
            if (level == kUnreachable) {
                out.push_back("node " + std::to_string(id) + ": not connected to the attacker");
            }
        }
    }
    return out;
}

void require_valid(const TechniqueGraph& graph, std::string_view context) {
    auto violations = validate(graph);
    if (violations.empty()) {
        return;
    }
    std::ostringstream msg;
    msg << context << ": invalid graph";
    for (const auto& v : violations) {
        msg << "; " << v;
    }
    throw InvalidGraph(msg.str());
}

namespace {

using ContentKey = std::tuple<NodeKind, std::string, std::set<std::string>, std::set<std::string>, bool, bool>;

ContentKey content_key(const KnowledgeNode& n) {
    return {n.kind, n.label, n.extra_labels, n.provenance, n.generalized, n.common};
}

// Assigns dense ranks to keys so equal keys get equal ranks.
template <typename Key>
std::vector<std::size_t> dense_rank(const std::vector<Key>& keys) {
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
    std::vector<std::size_t> rank(keys.size());
    std::size_t r = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && keys[order[i - 1]] < keys[order[i]]) {
            ++r;
        }
        rank[order[i]] = r;
    }
    return rank;
}

}  // namespace

TechniqueGraph canonicalize(const TechniqueGraph& graph) {
    const std::size_t n = graph.nodes.size();
    std::unordered_map<NodeId, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
        index[graph.nodes[i].id] = i;
    }

    std::vector<ContentKey> base_keys;
    base_keys.reserve(n);
    for (const auto& node : graph.nodes) {
        base_keys.push_back(content_key(node));
    }
    auto cls = dense_rank(base_keys);

    // Colour refinement: a node's class absorbs the classes of its neighbours
    // together with edge direction and relations.
    std::vector<std::string> edge_tokens;
    edge_tokens.reserve(graph.edges.size());
    for (const auto& e : graph.edges) {
        std::string t;
        for (const auto& r : e.relations) {
            t += r.token();
            t += ',';
        }
        edge_tokens.push_back(std::move(t));
    }
    for (std::size_t round = 0; round < n; ++round) {
        using Signature = std::vector<std::tuple<int, std::string, std::size_t>>;
        std::vector<std::pair<std::size_t, Signature>> keys(n);
        for (std::size_t i = 0; i < n; ++i) {
            keys[i].first = cls[i];
        }
        for (std::size_t k = 0; k < graph.edges.size(); ++k) {
            const auto& e = graph.edges[k];
            auto s = index.find(e.src);
            auto d = index.find(e.dst);
            if (s == index.end() || d == index.end()) {
                continue;
            }
            keys[s->second].second.emplace_back(0, edge_tokens[k], cls[d->second]);
            keys[d->second].second.emplace_back(1, edge_tokens[k], cls[s->second]);
        }
        for (auto& k : keys) {
            std::sort(k.second.begin(), k.second.end());
        }
        auto next = dense_rank(keys);
        const auto classes = [](const std::vector<std::size_t>& c) {
            return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
        };
        const bool stable = classes(next) == classes(cls);
        cls = std::move(next);
        if (stable) {
            break;
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        return std::tie(base_keys[a], cls[a]) < std::tie(base_keys[b], cls[b]);
    });

    TechniqueGraph out;
    out.technique_id = graph.technique_id;
    out.procedure_id = graph.procedure_id;
    out.source_kind = graph.source_kind;
    std::unordered_map<NodeId, NodeId> remap;
    for (std::size_t i = 0; i < n; ++i) {
        KnowledgeNode node = graph.nodes[order[i]];
        remap[node.id] = i;
        node.id = i;
        out.nodes.push_back(std::move(node));
    }
    for (const auto& e : graph.edges) {
        KnowledgeEdge copy = e;
        auto s = remap.find(e.src);
        auto d = remap.find(e.dst);
        if (s == remap.end() || d == remap.end()) {
            continue;
        }
        copy.src = s->second;
        copy.dst = d->second;
        out.edges.push_back(std::move(copy));
    }
    std::sort(out.edges.begin(), out.edges.end(), [](const auto& a, const auto& b) {
        return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
    });
    return out;
}

bool structurally_equal(const TechniqueGraph& a, const TechniqueGraph& b) {
    auto ca = canonicalize(a);
    auto cb = canonicalize(b);
    return ca.nodes == cb.nodes && ca.edges == cb.edges;
}

void tidy_labels(KnowledgeNode& node) { node.extra_labels.erase(node.label); }

void merge_nodes(TechniqueGraph& graph, NodeId survivor, NodeId absorbed) {
    if (survivor == absorbed) {
        return;
    }
    auto* keep = graph.find_node(survivor);
    auto* gone = graph.find_node(absorbed);
    if (!keep || !gone) {
        throw InvalidGraph("merge_nodes: unknown node id");
    }
    keep->extra_labels.insert(gone->label);
    keep->extra_labels.insert(gone->extra_labels.begin(), gone->extra_labels.end());
    keep->provenance.insert(gone->provenance.begin(), gone->provenance.end());
    keep->generalized = keep->generalized || gone->generalized;
    keep->common = keep->common && gone->common;
    tidy_labels(*keep);

    std::vector<KnowledgeEdge> moved;
    std::erase_if(graph.edges, [&](const KnowledgeEdge& e) {
        if (e.src == absorbed || e.dst == absorbed) {
            moved.push_back(e);
            return true;
        }
        return false;
    });
    std::erase_if(graph.nodes, [&](const KnowledgeNode& n) { return n.id == absorbed; });
    for (auto& e : moved) {
        NodeId src = e.src == absorbed ? survivor : e.src;
        NodeId dst = e.dst == absorbed ? survivor : e.dst;
        graph.add_edge(src, dst, e.relations, e.timestamps, e.provenance);
    }
}

}  // namespace tkg
