#include "tkg/align.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <tuple>
#include <unordered_map>

#include "tkg/merge.hpp"
#include "tkg/text.hpp"

namespace tkg {

namespace {

struct Adjacent {
    NodeId other;
    std::size_t edge;  // index into graph.edges
    bool outgoing;
};

using AdjacencyMap = std::unordered_map<NodeId, std::vector<Adjacent>>;

AdjacencyMap adjacency(const TechniqueGraph& g, bool skip_attacker) {
    AdjacencyMap adj;
    const auto* a = g.attacker();
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        if (skip_attacker && a && (e.src == a->id || e.dst == a->id)) {
            continue;
        }
        adj[e.src].push_back({e.dst, i, true});
        adj[e.dst].push_back({e.src, i, false});
    }
    return adj;
}

struct PairHash {
    std::size_t operator()(const std::pair<NodeId, NodeId>& p) const noexcept {
        return std::hash<NodeId>()(p.first) * 1000003u ^ std::hash<NodeId>()(p.second);
    }
};

class Aligner {
public:
    Aligner(const TechniqueGraph& tech, const TechniqueGraph& prov, const AlignConfig& cfg)
        : tech_(tech), prov_(prov), cfg_(cfg), tech_adj_(adjacency(tech, true)), prov_adj_(adjacency(prov, false)) {
        const auto* a = tech.attacker();
        for (NodeId id : bfs_order(tech)) {
            if (!a || id != a->id) {
                scored_nodes_.push_back(id);
            }
        }
        for (std::size_t i = 0; i < tech.edges.size(); ++i) {
            const auto& e = tech.edges[i];
            if (!a || (e.src != a->id && e.dst != a->id)) {
                scored_edges_.push_back(i);
            }
        }
        for (std::size_t i = 0; i < prov.edges.size(); ++i) {
            prov_edge_index_[{prov.edges[i].src, prov.edges[i].dst}] = i;
        }
        for (const auto& n : prov.nodes) {
            if (n.kind != NodeKind::Attacker) {
                prov_by_kind_[n.kind].push_back(&n);
            }
        }
    }

    AlignmentResult run() {
        AlignmentResult best;
        best.technique_id = tech_.technique_id;
        if (scored_nodes_.empty()) {
            best.score = 1.0;
            return best;
        }
        bool have = false;
        for (const auto& [t, p] : seeds()) {
            auto result = expand_from(t, p);
            if (!have || result.score > best.score + 1e-12) {
                best = std::move(result);
                have = true;
            }
            if (best.score >= 1.0) {
                break;
            }
        }
        return best;
    }

private:
    const TechniqueGraph& tech_;
    const TechniqueGraph& prov_;
    const AlignConfig& cfg_;
    AdjacencyMap tech_adj_;
    AdjacencyMap prov_adj_;
    std::vector<NodeId> scored_nodes_;  // BFS order
    std::vector<std::size_t> scored_edges_;
    std::map<std::pair<NodeId, NodeId>, std::size_t> prov_edge_index_;
    std::map<NodeKind, std::vector<const KnowledgeNode*>> prov_by_kind_;
    std::unordered_map<std::pair<NodeId, NodeId>, double, PairHash> sim_cache_;

    double sim(NodeId t, NodeId p) {
        auto key = std::make_pair(t, p);
        auto it = sim_cache_.find(key);
        if (it != sim_cache_.end()) {
            return it->second;
        }
        double s = node_similarity(*tech_.find_node(t), *prov_.find_node(p));
        sim_cache_.emplace(key, s);
        return s;
    }

    bool exact(NodeId t, NodeId p) const {
        return normalize_object(tech_.find_node(t)->label) == normalize_object(prov_.find_node(p)->label);
    }

    // (similarity, exact label, -id): larger is better
    using Rank = std::tuple<double, bool, std::int64_t>;
    Rank rank(NodeId t, NodeId p) { return {sim(t, p), exact(t, p), -static_cast<std::int64_t>(p)}; }

    std::vector<std::pair<NodeId, NodeId>> seeds() {
        struct Seed {
            Rank rank;
            std::size_t tech_index;
            NodeId t;
            NodeId p;
        };
        std::vector<Seed> all;
        bool has_process = false;
        for (NodeId t : scored_nodes_) {
            has_process = has_process || tech_.find_node(t)->kind == NodeKind::Process;
        }
        for (std::size_t i = 0; i < scored_nodes_.size(); ++i) {
            const NodeId t = scored_nodes_[i];
            const auto kind = tech_.find_node(t)->kind;
            if (has_process && kind != NodeKind::Process) {
                continue;
            }
            for (const auto* p : prov_by_kind_[kind]) {
                if (sim(t, p->id) >= cfg_.similarity_threshold && sim(t, p->id) > 0) {
                    all.push_back({rank(t, p->id), i, t, p->id});
                }
            }
        }
        std::sort(all.begin(), all.end(), [](const Seed& a, const Seed& b) {
            if (a.rank != b.rank) return a.rank > b.rank;
            return a.tech_index < b.tech_index;
        });
        std::vector<std::pair<NodeId, NodeId>> out;
        for (const auto& s : all) {
            if (out.size() >= cfg_.max_seeds) {
                break;
            }
            out.emplace_back(s.t, s.p);
        }
        return out;
    }

    AlignmentResult expand_from(NodeId seed_t, NodeId seed_p) {
        std::map<NodeId, NodeId> map;
        std::set<NodeId> used;
        std::vector<NodeId> queue;
        auto assign = [&](NodeId t, NodeId p) {
            map[t] = p;
            used.insert(p);
            queue.push_back(t);
        };
        auto grow = [&] {
            for (std::size_t head = 0; head < queue.size(); ++head) {
                const NodeId t = queue[head];
                const NodeId p = map.at(t);
                for (const auto& tn : tech_adj_[t]) {
                    if (map.count(tn.other)) {
                        continue;
                    }
                    const auto& trels = tech_.edges[tn.edge].relations;
                    const auto kind = tech_.find_node(tn.other)->kind;
                    std::optional<NodeId> pick;
                    Rank best{};
                    for (const auto& pn : prov_adj_[p]) {
                        if (pn.outgoing != tn.outgoing || used.count(pn.other)) {
                            continue;
                        }
                        const auto* q = prov_.find_node(pn.other);
                        if (q->kind != kind || !relations_compatible(trels, prov_.edges[pn.edge].relations)) {
                            continue;
                        }
                        const double s = sim(tn.other, q->id);
                        if (s < cfg_.similarity_threshold || s <= 0) {
                            continue;
                        }
                        Rank r = rank(tn.other, q->id);
                        if (!pick || r > best) {
                            pick = q->id;
                            best = r;
                        }
                    }
                    if (pick) {
                        assign(tn.other, *pick);
                    }
                }
            }
            queue.clear();
        };
        assign(seed_t, seed_p);
        grow();
        // parts of the technique not reachable from the seed get their own seed
        for (NodeId t : scored_nodes_) {
            if (map.count(t)) {
                continue;
            }
            const auto kind = tech_.find_node(t)->kind;
            std::optional<NodeId> pick;
            Rank best{};
            for (const auto* q : prov_by_kind_[kind]) {
                if (used.count(q->id)) {
                    continue;
                }
                const double s = sim(t, q->id);
                if (s < cfg_.similarity_threshold || s <= 0) {
                    continue;
                }
                Rank r = rank(t, q->id);
                if (!pick || r > best) {
                    pick = q->id;
                    best = r;
                }
            }
            if (pick) {
                assign(t, *pick);
                grow();
            }
        }
        return score(std::move(map));
    }

    AlignmentResult score(std::map<NodeId, NodeId> map) {
        AlignmentResult r;
        r.technique_id = tech_.technique_id;
        std::int64_t lo = std::numeric_limits<std::int64_t>::max();
        std::int64_t hi = std::numeric_limits<std::int64_t>::min();
        for (std::size_t i : scored_edges_) {
            const auto& e = tech_.edges[i];
            auto s = map.find(e.src);
            auto d = map.find(e.dst);
            if (s == map.end() || d == map.end()) {
                continue;
            }
            auto pe = prov_edge_index_.find({s->second, d->second});
            if (pe == prov_edge_index_.end()) {
                continue;
            }
            const auto& pedge = prov_.edges[pe->second];
            if (!relations_compatible(e.relations, pedge.relations)) {
                continue;
            }
            ++r.matched_edges;
            for (auto ts : pedge.timestamps) {
                lo = std::min(lo, ts);
                hi = std::max(hi, ts);
            }
        }
        if (lo <= hi) {
            r.window = std::make_pair(lo, hi);
        }
        const double node_frac = static_cast<double>(map.size()) / static_cast<double>(scored_nodes_.size());
        if (scored_edges_.empty()) {
            r.score = node_frac;
        } else {
            const double edge_frac = static_cast<double>(r.matched_edges) / static_cast<double>(scored_edges_.size());
            r.score = cfg_.node_weight * node_frac + (1.0 - cfg_.node_weight) * edge_frac;
        }
        r.node_map = std::move(map);
        return r;
    }
};

}  // namespace

nlohmann::json alignment_to_json(const AlignmentResult& result) {
    nlohmann::json doc;
    doc["technique_id"] = result.technique_id;
    doc["score"] = result.score;
    doc["matched_edges"] = result.matched_edges;
    doc["node_map"] = nlohmann::json::array();
    for (const auto& [t, p] : result.node_map) {
        doc["node_map"].push_back({{"technique_node", t}, {"provenance_node", p}});
    }
    if (result.window) {
        doc["window"] = {{"t_min", result.window->first}, {"t_max", result.window->second}};
    } else {
        doc["window"] = nullptr;
    }
    return doc;
}

AlignmentResult align_technique(const TechniqueGraph& tech, const TechniqueGraph& prov, const AlignConfig& cfg) {
    require_valid(tech, "align_technique technique graph");
    require_valid(prov, "align_technique provenance graph");
    return Aligner(tech, prov, cfg).run();
}

std::vector<AlignmentResult> detect_techniques(const TechniqueGraph& prov, std::span<const TechniqueGraph> kb,
                                               double threshold, const AlignConfig& cfg) {
    std::vector<AlignmentResult> out;
    for (const auto& tech : kb) {
        auto r = align_technique(tech, prov, cfg);
        if (r.score >= threshold) {
            out.push_back(std::move(r));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const AlignmentResult& a, const AlignmentResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.technique_id < b.technique_id;
    });
    return out;
}

AttackChain build_attack_chain(std::vector<AlignmentResult> detections, const TechniqueGraph& prov) {
    (void)prov;
    std::stable_sort(detections.begin(), detections.end(), [](const AlignmentResult& a, const AlignmentResult& b) {
        if (a.window.has_value() != b.window.has_value()) {
            return a.window.has_value();
        }
        if (a.window && a.window->first != b.window->first) {
            return a.window->first < b.window->first;
        }
        return a.technique_id < b.technique_id;
    });
    AttackChain chain;
    chain.steps = std::move(detections);
    for (std::size_t i = 1; i < chain.steps.size(); ++i) {
        std::set<NodeId> prev;
        for (const auto& [t, p] : chain.steps[i - 1].node_map) {
            prev.insert(p);
        }
        std::set<NodeId> shared;
        for (const auto& [t, p] : chain.steps[i].node_map) {
            if (prev.count(p)) {
                shared.insert(p);
            }
        }
        if (!shared.empty()) {
            chain.links.push_back({i - 1, i, {shared.begin(), shared.end()}});
        }
    }
    return chain;
}

nlohmann::json attack_chain_to_json(const AttackChain& chain, const TechniqueGraph& prov) {
    nlohmann::json doc;
    doc["steps"] = nlohmann::json::array();
    for (const auto& s : chain.steps) {
        doc["steps"].push_back(alignment_to_json(s));
    }
    doc["links"] = nlohmann::json::array();
    for (const auto& l : chain.links) {
        nlohmann::json shared = nlohmann::json::array();
        for (NodeId id : l.shared_nodes) {
            const auto* n = prov.find_node(id);
            shared.push_back({{"id", id}, {"label", n ? n->label : std::string{}}});
        }
        doc["links"].push_back({{"from", l.from}, {"to", l.to}, {"shared_nodes", shared}});
    }
    return doc;
}

}  // namespace tkg
