#include "tkg/merge.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <regex>
#include <unordered_map>

#include "tkg/text.hpp"

namespace tkg {

namespace {

constexpr std::size_t kMaxMergePasses = 32;

struct CompiledRule {
    std::regex re;
    std::string replacement;
};

std::vector<CompiledRule> compile(const std::vector<GeneralizationRule>& rules) {
    std::vector<CompiledRule> out;
    out.reserve(rules.size());
    for (const auto& r : rules) {
        out.push_back({std::regex(r.pattern, std::regex::ECMAScript | std::regex::icase), r.replacement});
    }
    return out;
}

// Compiling std::regex is slow; the default rule set is compiled once.
const std::vector<CompiledRule>& compiled(const std::vector<GeneralizationRule>& rules) {
    static const std::vector<GeneralizationRule> kDefaults = default_generalization_rules();
    static const std::vector<CompiledRule> kDefaultCompiled = compile(kDefaults);
    if (rules == kDefaults) {
        return kDefaultCompiled;
    }
    thread_local std::vector<GeneralizationRule> last_rules;
    thread_local std::vector<CompiledRule> last_compiled;
    if (rules != last_rules) {
        last_compiled = compile(rules);
        last_rules = rules;
    }
    return last_compiled;
}

std::string generalize_with(std::string_view label, const std::vector<CompiledRule>& rules) {
    std::string out(label);
    for (const auto& r : rules) {
        out = std::regex_replace(out, r.re, r.replacement);
    }
    return out;
}

char separator_for(std::string_view label) { return label.find('/') != std::string_view::npos &&
                                                        label.find('\\') == std::string_view::npos
                                                    ? '/'
                                                    : '\\'; }

SourceKind family_of(SourceKind kind) {
    switch (kind) {
        case SourceKind::Log:
        case SourceKind::Static:
        case SourceKind::MergedLog:
            return SourceKind::MergedLog;
        case SourceKind::Cti:
        case SourceKind::MergedCti:
            return SourceKind::MergedCti;
        case SourceKind::Unified:
            return SourceKind::Unified;
    }
    return kind;
}

std::optional<NodeId> attacker_id(const TechniqueGraph& g) {
    if (const auto* a = g.attacker()) {
        return a->id;
    }
    return std::nullopt;
}

Relation default_relation(NodeKind kind) {
    switch (kind) {
        case NodeKind::Thread: return Relation::ThreadStart;
        case NodeKind::File: return Relation::FileCreate;
        case NodeKind::Registry: return Relation::RegistrySetValue;
        case NodeKind::Network: return Relation::NetSend;
        case NodeKind::Image: return Relation::ImageLoad;
        default: return Relation::ProcessStart;
    }
}

std::vector<std::string> all_labels(const KnowledgeNode& n) {
    std::vector<std::string> out{n.label};
    out.insert(out.end(), n.extra_labels.begin(), n.extra_labels.end());
    return out;
}

struct Merger {
    TechniqueGraph& g;
    std::map<NodeId, std::set<std::string>> log;  // survivor -> absorbed labels

    void merge(NodeId survivor, NodeId absorbed) {
        if (survivor == absorbed) {
            return;
        }
        const auto* gone = g.find_node(absorbed);
        auto& entry = log[survivor];
        entry.insert(gone->label);
        entry.insert(gone->extra_labels.begin(), gone->extra_labels.end());
        auto it = log.find(absorbed);
        if (it != log.end()) {
            entry.insert(it->second.begin(), it->second.end());
            log.erase(it);
        }
        merge_nodes(g, survivor, absorbed);
    }

    // Merges every group (ids ascending, lowest survives). Returns true if anything merged.
    template <typename Key>
    bool merge_groups(const std::map<Key, std::vector<NodeId>>& groups) {
        bool changed = false;
        for (const auto& [key, ids] : groups) {
            for (std::size_t i = 1; i < ids.size(); ++i) {
                merge(ids.front(), ids[i]);
                changed = true;
            }
        }
        return changed;
    }
};

std::string process_name_key(const KnowledgeNode& n, const std::vector<CompiledRule>& rules) {
    return basename(normalize_object(generalize_with(n.label, rules)));
}

std::map<NodeId, std::size_t> degrees(const TechniqueGraph& g) {
    std::map<NodeId, std::size_t> deg;
    for (const auto& n : g.nodes) {
        deg[n.id] = 0;
    }
    for (const auto& e : g.edges) {
        ++deg[e.src];
        ++deg[e.dst];
    }
    return deg;
}

// Step 4: leaf File/Registry/Image nodes whose labels cluster together are
// fused, and a node whose own labels form one cluster takes its
// representative as label.
bool cluster_leaves(Merger& m, double threshold) {
    bool changed = false;
    auto deg = degrees(m.g);
    for (NodeKind kind : {NodeKind::File, NodeKind::Registry, NodeKind::Image}) {
        std::vector<std::string> labels;
        std::map<std::string, std::vector<NodeId>> owners;
        for (const auto& n : m.g.nodes) {
            if (n.kind == kind && deg[n.id] <= 1) {
                labels.push_back(n.label);
                owners[n.label].push_back(n.id);
            }
        }
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        for (const auto& cluster : common_prefix_cluster(labels, threshold)) {
            std::vector<NodeId> ids;
            for (const auto& label : cluster.members) {
                ids.insert(ids.end(), owners[label].begin(), owners[label].end());
            }
            std::sort(ids.begin(), ids.end());
            for (std::size_t i = 1; i < ids.size(); ++i) {
                m.merge(ids.front(), ids[i]);
                changed = true;
            }
        }
    }
    deg = degrees(m.g);
    for (auto& n : m.g.nodes) {
        if ((n.kind != NodeKind::File && n.kind != NodeKind::Registry && n.kind != NodeKind::Image) ||
            deg[n.id] > 1 || n.extra_labels.empty()) {
            continue;
        }
        auto clusters = common_prefix_cluster(all_labels(n), threshold);
        if (clusters.size() != 1 || clusters.front().members.size() < 2) {
            continue;
        }
        const auto& rep = clusters.front().representative;
        if (rep != n.label) {
            n.extra_labels.insert(n.label);
            n.label = rep;
            n.generalized = true;
            tidy_labels(n);
            changed = true;
        }
    }
    return changed;
}

bool generalize_nodes(TechniqueGraph& g, const std::vector<CompiledRule>& rules) {
    bool changed = false;
    for (auto& n : g.nodes) {
        if (n.kind == NodeKind::Attacker) {
            continue;
        }
        auto label = generalize_with(n.label, rules);
        if (label != n.label) {
            n.extra_labels.insert(n.label);
            n.label = label;
            n.generalized = true;
            tidy_labels(n);
            changed = true;
        }
    }
    return changed;
}

// Dense ids in current id order; the attacker keeps 0.
void renumber(TechniqueGraph& g, std::map<NodeId, std::set<std::string>>& log) {
    std::sort(g.nodes.begin(), g.nodes.end(), [](const KnowledgeNode& a, const KnowledgeNode& b) {
        if ((a.kind == NodeKind::Attacker) != (b.kind == NodeKind::Attacker)) {
            return a.kind == NodeKind::Attacker;
        }
        return a.id < b.id;
    });
    std::unordered_map<NodeId, NodeId> map;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        map[g.nodes[i].id] = i;
        g.nodes[i].id = i;
    }
    for (auto& e : g.edges) {
        e.src = map.at(e.src);
        e.dst = map.at(e.dst);
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const KnowledgeEdge& a, const KnowledgeEdge& b) { return std::tie(a.src, a.dst) < std::tie(b.src, b.dst); });
    std::map<NodeId, std::set<std::string>> remapped;
    for (auto& [id, labels] : log) {
        auto it = map.find(id);
        if (it != map.end()) {
            remapped[it->second] = std::move(labels);
        }
    }
    log = std::move(remapped);
}

std::vector<MergeLogEntry> to_log(const std::map<NodeId, std::set<std::string>>& log) {
    std::vector<MergeLogEntry> out;
    for (const auto& [id, labels] : log) {
        out.push_back({id, {labels.begin(), labels.end()}});
    }
    return out;
}

MergeReport make_report(const std::string& technique_id, std::size_t inputs, std::size_t nodes_before,
                        std::size_t edges_before, const TechniqueGraph& result,
                        const std::map<NodeId, std::set<std::string>>& log) {
    MergeReport r;
    r.technique_id = technique_id;
    r.input_graph_count = inputs;
    r.nodes_before = nodes_before;
    r.edges_before = edges_before;
    r.nodes_after = result.nodes.size();
    r.edges_after = result.edges.size();
    r.entity_retention_pct = retention_pct(r.nodes_after, r.nodes_before);
    r.edge_retention_pct = retention_pct(r.edges_after, r.edges_before);
    r.merged_node_log = to_log(log);
    return r;
}

}  // namespace

// ---- configuration --------------------------------------------------------

std::vector<GeneralizationRule> default_generalization_rules() {
    return {
        // C:\Users\<name>\... ; shared profiles stay concrete
        {R"(^([a-z]:\\users\\)(?!(?:public|default|all users|\.\*)(?:\\|$))[^\\]+)", "$1.*"},
        {R"(^(/home/)(?!\.\*(?:/|$))[^/]+)", "$1.*"},
        // registry keys deeper than hive + 5 segments
        {R"(^((?:hkey_[a-z_]+|hklm|hkcu|hkcr|hku):?(?:\\[^\\]+){5})\\.+$)", "$1\\.*"},
        // random temporary file names: hex runs, tmpXXXX, GUIDs
        {R"(([\\/])(?:[0-9a-f]{8,}|~?tmp[0-9a-f]{2,}|\{?[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}\}?)(\.[a-z0-9]+)?$)",
         "$1.*$2"},
    };
}

void validate_merge_config(const MergeConfig& cfg) {
    auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_range(cfg.prefix_cluster_threshold) || !in_range(cfg.similarity_threshold)) {
        throw ConfigError("merge thresholds must lie in [0, 1]");
    }
    for (const auto& r : cfg.generalization_rules) {
        try {
            std::regex re(r.pattern, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw ConfigError("generalization rule '" + r.pattern + "': " + e.what());
        }
    }
}

MergeConfig merge_config_from_json(const nlohmann::json& doc) {
    MergeConfig cfg;
    try {
        cfg.prefix_cluster_threshold = doc.value("prefix_cluster_threshold", cfg.prefix_cluster_threshold);
        cfg.similarity_threshold = doc.value("similarity_threshold", cfg.similarity_threshold);
        if (doc.contains("generalization_rules")) {
            cfg.generalization_rules.clear();
            for (const auto& r : doc.at("generalization_rules")) {
                cfg.generalization_rules.push_back(
                    {r.at("pattern").get<std::string>(), r.at("replacement").get<std::string>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("merge config: ") + e.what());
    }
    validate_merge_config(cfg);
    return cfg;
}

nlohmann::json merge_config_to_json(const MergeConfig& cfg) {
    nlohmann::json doc;
    doc["prefix_cluster_threshold"] = cfg.prefix_cluster_threshold;
    doc["similarity_threshold"] = cfg.similarity_threshold;
    doc["generalization_rules"] = nlohmann::json::array();
    for (const auto& r : cfg.generalization_rules) {
        doc["generalization_rules"].push_back({{"pattern", r.pattern}, {"replacement", r.replacement}});
    }
    return doc;
}

double retention_pct(std::size_t after, std::size_t before) {
    if (before == 0) {
        return 100.0;
    }
    const unsigned long long a = after;
    const unsigned long long b = before;
    const unsigned long long thousandths = (a * 100000ULL * 2ULL + b) / (2ULL * b);
    return static_cast<double>(thousandths) / 1000.0;
}

nlohmann::json merge_report_to_json(const MergeReport& report) {
    nlohmann::ordered_json doc;
    doc["technique_id"] = report.technique_id;
    doc["input_graph_count"] = report.input_graph_count;
    doc["nodes_before"] = report.nodes_before;
    doc["nodes_after"] = report.nodes_after;
    doc["edges_before"] = report.edges_before;
    doc["edges_after"] = report.edges_after;
    doc["entity_retention_pct"] = report.entity_retention_pct;
    doc["edge_retention_pct"] = report.edge_retention_pct;
    doc["merged_node_log"] = nlohmann::ordered_json::array();
    for (const auto& e : report.merged_node_log) {
        doc["merged_node_log"].push_back({{"survivor", e.survivor}, {"absorbed_labels", e.absorbed_labels}});
    }
    return nlohmann::json::parse(doc.dump());
}

MergeReport merge_report_from_json(const nlohmann::json& doc) {
    try {
        MergeReport r;
        r.technique_id = doc.value("technique_id", std::string{});
        r.input_graph_count = doc.value("input_graph_count", std::size_t{0});
        r.nodes_before = doc.at("nodes_before").get<std::size_t>();
        r.nodes_after = doc.at("nodes_after").get<std::size_t>();
        r.edges_before = doc.at("edges_before").get<std::size_t>();
        r.edges_after = doc.at("edges_after").get<std::size_t>();
        r.entity_retention_pct = doc.value("entity_retention_pct", retention_pct(r.nodes_after, r.nodes_before));
        r.edge_retention_pct = doc.value("edge_retention_pct", retention_pct(r.edges_after, r.edges_before));
        if (doc.contains("merged_node_log")) {
            for (const auto& e : doc["merged_node_log"]) {
                r.merged_node_log.push_back(
                    {e.at("survivor").get<NodeId>(), e.at("absorbed_labels").get<std::vector<std::string>>()});
            }
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("merge report: ") + e.what());
    }
}

// ---- label operations -----------------------------------------------------

std::string generalize_label(std::string_view label, const std::vector<GeneralizationRule>& rules) {
    return generalize_with(label, compiled(rules));
}

std::size_t shared_prefix_segments(std::string_view a, std::string_view b) {
    auto sa = split_segments(to_lower(a));
    auto sb = split_segments(to_lower(b));
    std::size_t i = 0;
    while (i < sa.size() && i < sb.size() && sa[i] == sb[i]) {
        ++i;
    }
    return i;
}

std::vector<PrefixCluster> common_prefix_cluster(std::vector<std::string> labels, double threshold) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    auto linked = [&](const std::string& a, const std::string& b) {
        const auto longest = std::max(split_segments(a).size(), split_segments(b).size());
        if (longest == 0) {
            return false;
        }
        return static_cast<double>(shared_prefix_segments(a, b)) / static_cast<double>(longest) >= threshold;
    };
    std::vector<PrefixCluster> clusters;
    for (const auto& label : labels) {
        bool placed = false;
        for (auto& c : clusters) {
            if (std::all_of(c.members.begin(), c.members.end(), [&](const std::string& m) { return linked(m, label); })) {
                c.members.push_back(label);
                placed = true;
                break;
            }
        }
        if (!placed) {
            clusters.push_back({{label}, {}});
        }
    }
    for (auto& c : clusters) {
        if (c.members.size() == 1) {
            c.representative = c.members.front();
            continue;
        }
        std::size_t shared = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 1; i < c.members.size(); ++i) {
            shared = std::min(shared, shared_prefix_segments(c.members.front(), c.members[i]));
        }
        // keep the first member's original spelling of the prefix
        const auto segs = split_segments(c.members.front());
        const char sep = separator_for(c.members.front());
        std::string rep;
        for (std::size_t i = 0; i < shared; ++i) {
            rep += segs[i];
            rep.push_back(sep);
        }
        rep += kWildcard;
        c.representative = rep;
    }
    return clusters;
}

double node_similarity(const KnowledgeNode& a, const KnowledgeNode& b) {
    if (a.kind != b.kind) {
        return 0.0;
    }
    if (a.kind == NodeKind::Attacker) {
        return 1.0;
    }
    double best = 0.0;
    for (const auto& x : all_labels(a)) {
        for (const auto& y : all_labels(b)) {
            if (labels_compatible(x, y)) {
                return 1.0;
            }
            if (is_path_suffix(x, y) || is_path_suffix(y, x)) {
                best = std::max(best, 0.8);
                continue;
            }
            auto tx = label_tokens(x);
            auto ty = label_tokens(y);
            std::set<std::string> sx(tx.begin(), tx.end());
            std::set<std::string> sy(ty.begin(), ty.end());
            std::size_t common = 0;
            for (const auto& t : sx) {
                common += sy.count(t);
            }
            const std::size_t uni = sx.size() + sy.size() - common;
            if (uni > 0) {
                best = std::max(best, static_cast<double>(common) / static_cast<double>(uni));
            }
        }
    }
    return best;
}

// ---- same-source aggregation ---------------------------------------------

std::size_t connect_orphans(TechniqueGraph& graph) {
    const auto* attacker = graph.attacker();
    if (!attacker) {
        throw MissingAttacker();
    }
    const NodeId root = attacker->id;
    std::size_t added = 0;
    auto levels = compute_levels(graph);
    for (const auto& n : graph.nodes) {
        if (levels[n.id] != kUnreachable) {
            continue;
        }
        // one edge per unreachable component, at its lowest id
        std::set<std::string> cti_tags;
        for (const auto& tag : n.provenance) {
            if (tag.starts_with("cti:")) {
                cti_tags.insert(tag);
            }
        }
        if (!cti_tags.empty()) {
            graph.add_edge(root, n.id, {EdgeRelation::text("mentions")}, {}, cti_tags);
        } else {
            graph.add_edge(root, n.id, {default_relation(n.kind)}, {}, n.provenance);
        }
        ++added;
        levels = compute_levels(graph);
    }
    return added;
}

std::pair<TechniqueGraph, MergeReport> merge_same_source(std::span<const TechniqueGraph> graphs,
                                                         const MergeConfig& cfg) {
    validate_merge_config(cfg);
    if (graphs.empty()) {
        throw Error("merge_same_source: no input graphs");
    }
    const auto family = family_of(graphs.front().source_kind);
    if (family == SourceKind::Unified) {
        throw SourceMismatch("merge_same_source: unified graphs cannot be merged as one source");
    }
    for (const auto& g : graphs) {
        require_valid(g, "merge_same_source input");
        if (g.technique_id != graphs.front().technique_id) {
            throw TechniqueMismatch("merge_same_source: " + g.technique_id + " vs " + graphs.front().technique_id);
        }
        if (family_of(g.source_kind) != family) {
            throw SourceMismatch(std::string("merge_same_source: ") + std::string(to_string(g.source_kind)) +
                                 " mixed with " + std::string(to_string(graphs.front().source_kind)));
        }
        if (!g.attacker()) {
            throw MissingAttacker();
        }
    }
    const auto& rules = compiled(cfg.generalization_rules);

    TechniqueGraph g;
    g.technique_id = graphs.front().technique_id;
    g.source_kind = family;
    std::size_t nodes_before = 0;
    std::size_t edges_before = 0;

    // (1) disjoint union with all attackers unified into node 0
    KnowledgeNode attacker;
    attacker.id = 0;
    attacker.kind = NodeKind::Attacker;
    attacker.label = std::string(kAttackerLabel);
    g.nodes.push_back(attacker);
    NodeId next = 1;
    for (const auto& in : graphs) {
        nodes_before += in.nodes.size();
        edges_before += in.edges.size();
        std::unordered_map<NodeId, NodeId> map;
        for (const auto& n : in.nodes) {
            if (n.kind == NodeKind::Attacker) {
                map[n.id] = 0;
                g.nodes.front().provenance.insert(n.provenance.begin(), n.provenance.end());
                g.nodes.front().extra_labels.insert(n.extra_labels.begin(), n.extra_labels.end());
                continue;
            }
            KnowledgeNode copy = n;
            copy.id = next++;
            map[n.id] = copy.id;
            g.nodes.push_back(std::move(copy));
        }
        for (const auto& e : in.edges) {
            g.add_edge(map.at(e.src), map.at(e.dst), e.relations, e.timestamps, e.provenance);
        }
    }
    tidy_labels(g.nodes.front());
    connect_orphans(g);

    Merger m{g, {}};
    for (std::size_t pass = 0; pass < kMaxMergePasses; ++pass) {
        const TechniqueGraph before = g;

        // (2) same level: processes by name, everything else by kind
        auto levels = compute_levels(g);
        std::map<std::tuple<std::uint32_t, NodeKind, std::string>, std::vector<NodeId>> by_level;
        for (const auto& n : g.nodes) {
            if (n.kind == NodeKind::Attacker) {
                continue;
            }
            std::string key = n.kind == NodeKind::Process ? process_name_key(n, rules) : std::string{};
            by_level[{levels.at(n.id), n.kind, key}].push_back(n.id);
        }
        for (auto& [key, ids] : by_level) {
            std::sort(ids.begin(), ids.end());
        }
        m.merge_groups(by_level);

        // (3) identical content across levels
        std::map<std::tuple<NodeKind, std::string, std::set<std::string>>, std::vector<NodeId>> by_content;
        for (const auto& n : g.nodes) {
            if (n.kind == NodeKind::Attacker) {
                continue;
            }
            std::set<std::string> extras;
            for (const auto& x : n.extra_labels) {
                extras.insert(normalize_object(x));
            }
            by_content[{n.kind, normalize_object(n.label), extras}].push_back(n.id);
        }
        for (auto& [key, ids] : by_content) {
            std::sort(ids.begin(), ids.end());
        }
        m.merge_groups(by_content);

        // (4) leaf prefix clustering; (5) is implicit in merge_nodes
        cluster_leaves(m, cfg.prefix_cluster_threshold);

        // (6) generalization
        generalize_nodes(g, rules);

        if (g == before) {
            break;
        }
    }
    renumber(g, m.log);
    require_valid(g, "merge_same_source result");
    auto report = make_report(g.technique_id, graphs.size(), nodes_before, edges_before, g, m.log);
    return {std::move(g), std::move(report)};
}

// ---- cross-source construction -------------------------------------------

std::vector<NodeId> bfs_order(const TechniqueGraph& graph) {
    std::map<NodeId, std::set<NodeId>> adj;
    for (const auto& n : graph.nodes) {
        adj[n.id];
    }
    for (const auto& e : graph.edges) {
        adj[e.src].insert(e.dst);
        adj[e.dst].insert(e.src);
    }
    std::vector<NodeId> order;
    std::set<NodeId> seen;
    std::deque<NodeId> queue;
    if (auto root = attacker_id(graph)) {
        queue.push_back(*root);
        seen.insert(*root);
    }
    auto drain = [&] {
        while (!queue.empty()) {
            NodeId id = queue.front();
            queue.pop_front();
            order.push_back(id);
            for (NodeId next : adj[id]) {
                if (seen.insert(next).second) {
                    queue.push_back(next);
                }
            }
        }
    };
    drain();
    for (const auto& [id, _] : adj) {
        if (seen.insert(id).second) {
            queue.push_back(id);
            drain();
        }
    }
    return order;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
    const std::size_t n = weights.size();
    if (n == 0) {
        return {};
    }
    const std::size_t real_cols = weights.front().size();
    const std::size_t m = real_cols + n;  // dummy columns let every row stay unassigned
    constexpr double kInf = std::numeric_limits<double>::infinity();
    auto cost = [&](std::size_t i, std::size_t j) {
        if (j >= real_cols) {
            return 0.0;
        }
        double w = weights[i][j];
        return w > 0 ? -w : 0.0;
    };
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> out(n, -1);
    for (std::size_t j = 1; j <= real_cols; ++j) {
        if (p[j] != 0 && weights[p[j] - 1][j - 1] > 0) {
            out[p[j] - 1] = static_cast<int>(j - 1);
        }
    }
    return out;
}

std::map<NodeId, NodeId> cross_source_matching(const TechniqueGraph& base, const TechniqueGraph& additional,
                                               const MergeConfig& cfg) {
    std::map<NodeId, NodeId> out;
    auto base_root = attacker_id(base);
    auto add_root = attacker_id(additional);
    if (base_root && add_root) {
        out[*add_root] = *base_root;
    }
    std::vector<const KnowledgeNode*> rows;
    std::vector<const KnowledgeNode*> cols;
    for (NodeId id : bfs_order(additional)) {
        const auto* n = additional.find_node(id);
        if (n->kind != NodeKind::Attacker) {
            rows.push_back(n);
        }
    }
    for (NodeId id : bfs_order(base)) {
        const auto* n = base.find_node(id);
        if (n->kind != NodeKind::Attacker) {
            cols.push_back(n);
        }
    }
    if (rows.empty() || cols.empty()) {
        return out;
    }
    // tiny positional penalty: among equally similar assignments, prefer
    // base nodes earlier in BFS order
    const double eps = 1e-9 / static_cast<double>(cols.size() + 1);
    std::vector<std::vector<double>> w(rows.size(), std::vector<double>(cols.size(), 0.0));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (rows[i]->kind != cols[j]->kind) {
                continue;
            }
            const double s = node_similarity(*rows[i], *cols[j]);
            if (s >= cfg.similarity_threshold && s > 0) {
                w[i][j] = s - eps * static_cast<double>(j + 1) / static_cast<double>(rows.size() + 1) -
                          eps * 1e-3 * static_cast<double>(i);
            }
        }
    }
    auto assignment = max_weight_assignment(w);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (assignment[i] >= 0) {
            out[rows[i]->id] = cols[static_cast<std::size_t>(assignment[i])]->id;
        }
    }
    return out;
}

std::pair<TechniqueGraph, MergeReport> merge_cross_source(const TechniqueGraph& base_in,
                                                          const TechniqueGraph& additional_in,
                                                          const MergeConfig& cfg) {
    validate_merge_config(cfg);
    if (base_in.technique_id != additional_in.technique_id) {
        throw TechniqueMismatch("merge_cross_source: base " + base_in.technique_id + " vs additional " +
                                additional_in.technique_id);
    }
    const bool base_ok = family_of(base_in.source_kind) == SourceKind::MergedLog;
    const bool add_ok = family_of(additional_in.source_kind) == SourceKind::MergedCti;
    if (!base_ok || !add_ok) {
        throw RoleError(std::string("merge_cross_source: base must be log-derived and additional CTI-derived, got ") +
                        std::string(to_string(base_in.source_kind)) + " / " +
                        std::string(to_string(additional_in.source_kind)));
    }
    require_valid(base_in, "merge_cross_source base");
    require_valid(additional_in, "merge_cross_source additional");
    TechniqueGraph base = base_in;
    TechniqueGraph additional = additional_in;
    if (!base.attacker() || !additional.attacker()) {
        throw MissingAttacker();
    }
    connect_orphans(base);
    connect_orphans(additional);

    const auto matching = cross_source_matching(base, additional, cfg);
    TechniqueGraph g = base;
    g.source_kind = SourceKind::Unified;
    g.procedure_id.reset();
    std::map<NodeId, std::set<std::string>> log;

    std::map<NodeId, NodeId> placed;  // additional id -> result id
    for (NodeId id : bfs_order(additional)) {
        const auto* n = additional.find_node(id);
        auto hit = matching.find(id);
        if (hit != matching.end()) {
            auto* target = g.find_node(hit->second);
            if (n->kind != NodeKind::Attacker) {
                auto& entry = log[target->id];
                entry.insert(n->label);
                entry.insert(n->extra_labels.begin(), n->extra_labels.end());
                target->extra_labels.insert(n->label);
                target->extra_labels.insert(n->extra_labels.begin(), n->extra_labels.end());
                target->generalized = target->generalized || n->generalized;
            }
            target->provenance.insert(n->provenance.begin(), n->provenance.end());
            tidy_labels(*target);
            placed[id] = target->id;
            continue;
        }
        KnowledgeNode copy = *n;
        placed[id] = g.add_node(std::move(copy));
    }
    // every additional edge, including the one to each inserted node's parent
    for (const auto& e : additional.edges) {
        g.add_edge(placed.at(e.src), placed.at(e.dst), e.relations, e.timestamps, e.provenance);
    }
    // label sets are already deduplicated; generalize last
    generalize_nodes(g, compiled(cfg.generalization_rules));
    renumber(g, log);
    require_valid(g, "merge_cross_source result");
    auto report = make_report(g.technique_id, 2, base_in.nodes.size() + additional_in.nodes.size(),
                              base_in.edges.size() + additional_in.edges.size(), g, log);
    return {std::move(g), std::move(report)};
}

}  // namespace tkg
