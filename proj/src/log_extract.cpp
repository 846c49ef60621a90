#include "tkg/log_extract.hpp"

#include <algorithm>
#include <unordered_map>

#include <json.hpp>

#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

namespace tkg {

std::optional<Relation> relation_for(EventType type, std::string_view name) {
    switch (type) {
        case EventType::Process:
            if (name == "Start") return Relation::ProcessStart;
            if (name == "DCStart") return Relation::ProcessDCStart;
            break;
        case EventType::Thread:
            if (name == "Start") return Relation::ThreadStart;
            if (name == "DCStart") return Relation::ThreadDCStart;
            break;
        case EventType::File:
            if (name == "Create") return Relation::FileCreate;
            if (name == "Read") return Relation::FileRead;
            if (name == "Write") return Relation::FileWrite;
            if (name == "Rename") return Relation::FileRename;
            break;
        case EventType::Registry:
            if (name == "Query") return Relation::RegistryQuery;
            if (name == "Create") return Relation::RegistryCreate;
            if (name == "SetValue") return Relation::RegistrySetValue;
            break;
        case EventType::Internet:
            if (name == "Receive") return Relation::NetReceive;
            if (name == "Send") return Relation::NetSend;
            break;
        case EventType::Image:
            if (name == "Load") return Relation::ImageLoad;
            if (name == "DCStart") return Relation::ImageDCStart;
            break;
    }
    return std::nullopt;
}

NodeKind object_kind(EventType type) {
    switch (type) {
        case EventType::Process: return NodeKind::Process;
        case EventType::Thread: return NodeKind::Thread;
        case EventType::File: return NodeKind::File;
        case EventType::Registry: return NodeKind::Registry;
        case EventType::Internet: return NodeKind::Network;
        case EventType::Image: return NodeKind::Image;
    }
    return NodeKind::File;
}

namespace {

bool is_creation(const AuditEvent& ev) {
    return ev.event_type == EventType::Process || ev.event_type == EventType::Thread;
}

bool crosses_process(const AuditEvent& ev) {
    return ev.event_type == EventType::Thread && ev.object_pid && *ev.object_pid != ev.pid;
}

bool is_common(const std::string& image, const ExtractConfig& cfg) {
    auto name = to_lower(basename(image));
    return std::any_of(cfg.common_processes.begin(), cfg.common_processes.end(),
                       [&](const std::string& c) { return to_lower(c) == name; });
}

// Appends nodes and edges with O(log n) pair lookup; ids are dense.
struct GraphBuilder {
    TechniqueGraph& g;
    std::map<std::pair<NodeId, NodeId>, std::size_t> edge_index;

    NodeId node(KnowledgeNode n) {
        n.id = g.nodes.size();
        g.nodes.push_back(std::move(n));
        return g.nodes.back().id;
    }

    void link(NodeId src, NodeId dst, Relation relation, std::optional<std::int64_t> ts,
              const std::set<std::string>& provenance) {
        if (src == dst) {
            return;
        }
        auto [it, fresh] = edge_index.try_emplace({src, dst}, g.edges.size());
        if (fresh) {
            KnowledgeEdge e;
            e.src = src;
            e.dst = dst;
            g.edges.push_back(std::move(e));
        }
        auto& e = g.edges[it->second];
        e.relations.insert(relation);
        e.provenance.insert(provenance.begin(), provenance.end());
        if (ts) {
            e.timestamps.push_back(*ts);
        }
    }

    void finish() {
        for (auto& e : g.edges) {
            std::sort(e.timestamps.begin(), e.timestamps.end());
            e.timestamps.erase(std::unique(e.timestamps.begin(), e.timestamps.end()), e.timestamps.end());
        }
    }
};

KnowledgeNode process_node(NodeKind kind, const std::string& image, const ExtractConfig& cfg) {
    KnowledgeNode n;
    n.kind = kind;
    n.label = image;
    n.common = is_common(image, cfg);
    return n;
}

}  // namespace

ProcessChain build_process_chain(std::span<const AuditEvent> events, std::int64_t initial_pid,
                                 const ExtractConfig& cfg) {
    ProcessChain chain;
    chain.initial_pid = initial_pid;
    std::optional<std::string> initial_image;
    for (const auto& ev : events) {
        if (ev.pid == initial_pid) {
            initial_image = ev.subject_image;
            break;
        }
        if (ev.object_pid == initial_pid && ev.event_type == EventType::Process) {
            initial_image = ev.object;
            break;
        }
    }
    if (!initial_image) {
        throw UnknownPid(initial_pid);
    }
    chain.pids.insert(initial_pid);
    chain.nodes.emplace(initial_pid, process_node(NodeKind::Process, *initial_image, cfg));

    for (const auto& ev : events) {
        if (!chain.contains(ev.pid) || !ev.object_pid || chain.contains(*ev.object_pid)) {
            continue;
        }
        auto relation = relation_for(ev.event_type, ev.event_name);
        if (!relation) {
            continue;
        }
        if (ev.event_type == EventType::Process) {
            chain.pids.insert(*ev.object_pid);
            chain.nodes.emplace(*ev.object_pid, process_node(NodeKind::Process, ev.object, cfg));
        } else if (crosses_process(ev)) {
            chain.pids.insert(*ev.object_pid);
            chain.nodes.emplace(*ev.object_pid, process_node(NodeKind::Thread, ev.object, cfg));
        }
    }
    return chain;
}

std::vector<AuditEvent> select_events(std::span<const AuditEvent> events, const ProcessChain& chain) {
    std::vector<AuditEvent> out;
    for (const auto& ev : events) {
        if (!chain.contains(ev.pid) || ev.object.empty()) {
            continue;
        }
        if (!relation_for(ev.event_type, ev.event_name)) {
            continue;
        }
        if (ev.event_type == EventType::Thread && !crosses_process(ev)) {
            continue;  // same-process threads fold into their process
        }
        if (is_creation(ev) && (!ev.object_pid || !chain.contains(*ev.object_pid))) {
            continue;
        }
        out.push_back(ev);
    }
    return out;
}

bool Whitelist::contains(NodeKind kind, std::string_view object) const {
    auto it = labels.find(kind);
    return it != labels.end() && it->second.count(normalize_object(object)) > 0;
}

std::size_t Whitelist::size() const {
    std::size_t total = 0;
    for (const auto& [kind, set] : labels) {
        total += set.size();
    }
    return total;
}

Whitelist build_whitelist(std::span<const AuditEvent> benign_events) {
    Whitelist wl;
    for (const auto& ev : benign_events) {
        if (is_creation(ev) || ev.object.empty()) {
            continue;
        }
        wl.labels[object_kind(ev.event_type)].insert(normalize_object(ev.object));
    }
    return wl;
}

std::vector<AuditEvent> filter_objects(std::span<const AuditEvent> events, const Whitelist& whitelist) {
    std::vector<AuditEvent> out;
    for (const auto& ev : events) {
        // process and thread creations carry the chain itself, never benign objects
        if (!is_creation(ev) && whitelist.contains(object_kind(ev.event_type), ev.object)) {
            continue;
        }
        out.push_back(ev);
    }
    return out;
}

std::string whitelist_to_json_text(const Whitelist& whitelist) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& [kind, set] : whitelist.labels) {
        doc[std::string(to_string(kind))] = std::vector<std::string>(set.begin(), set.end());
    }
    return doc.dump(2) + "\n";
}

void write_whitelist(const std::filesystem::path& path, const Whitelist& whitelist) {
    write_text_file(path, whitelist_to_json_text(whitelist));
}

Whitelist read_whitelist(const std::filesystem::path& path) {
    Whitelist wl;
    try {
        auto doc = nlohmann::json::parse(read_text_file(path));
        for (const auto& [key, values] : doc.items()) {
            auto kind = node_kind_from_string(key);
            if (!kind) {
                throw SchemaError("whitelist: unknown kind '" + key + "'");
            }
            for (const auto& v : values) {
                wl.labels[*kind].insert(normalize_object(v.get<std::string>()));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("whitelist: ") + e.what());
    }
    return wl;
}

TechniqueGraph build_event_graph(std::span<const AuditEvent> events, const ProcessChain& chain,
                                 const std::string& technique_id, const std::string& procedure_id) {
    TechniqueGraph g;
    g.technique_id = technique_id;
    g.procedure_id = procedure_id;
    g.source_kind = SourceKind::Log;
    const std::set<std::string> tag = {"log:" + procedure_id};
    GraphBuilder b{g, {}};

    KnowledgeNode attacker;
    attacker.kind = NodeKind::Attacker;
    attacker.label = std::string(kAttackerLabel);
    attacker.provenance = tag;
    const NodeId attacker_id = b.node(attacker);

    std::unordered_map<std::int64_t, NodeId> pid_nodes;
    std::map<std::pair<NodeKind, std::string>, NodeId> object_nodes;
    auto pid_node = [&](std::int64_t pid) {
        auto it = pid_nodes.find(pid);
        if (it != pid_nodes.end()) {
            return it->second;
        }
        KnowledgeNode n = chain.nodes.at(pid);
        n.provenance = tag;
        NodeId id = b.node(std::move(n));
        pid_nodes.emplace(pid, id);
        return id;
    };

    const NodeId initial = pid_node(chain.initial_pid);
    b.link(attacker_id, initial, Relation::ProcessStart, std::nullopt, tag);

    for (const auto& ev : events) {
        auto relation = relation_for(ev.event_type, ev.event_name);
        if (!relation || !chain.contains(ev.pid)) {
            continue;
        }
        const NodeId src = pid_node(ev.pid);
        NodeId dst = 0;
        if (is_creation(ev)) {
            if (!ev.object_pid || !chain.contains(*ev.object_pid)) {
                continue;
            }
            dst = pid_node(*ev.object_pid);
        } else {
            auto kind = object_kind(ev.event_type);
            auto key = std::make_pair(kind, normalize_object(ev.object));
            auto it = object_nodes.find(key);
            if (it == object_nodes.end()) {
                KnowledgeNode n;
                n.kind = kind;
                n.label = ev.object;
                n.provenance = tag;
                it = object_nodes.emplace(key, b.node(std::move(n))).first;
            }
            dst = it->second;
        }
        b.link(src, dst, *relation, ev.ts, tag);
    }
    b.finish();
    return g;
}

namespace {

std::string extension_of(const std::string& label) {
    auto name = basename(label);
    auto dot = name.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == name.size()) {
        return {};
    }
    return to_lower(name.substr(dot));
}

char separator_of(const std::string& label) {
    return label.find('\\') != std::string::npos ? '\\' : '/';
}

}  // namespace

TechniqueGraph aggregate_edges(TechniqueGraph graph, const ExtractConfig& cfg) {
    // Rebuild edges so each (src, dst) pair has one record.
    std::vector<KnowledgeEdge> edges = std::move(graph.edges);
    graph.edges.clear();
    for (const auto& e : edges) {
        graph.add_edge(e.src, e.dst, e.relations, e.timestamps, e.provenance);
    }

    std::map<NodeId, std::size_t> degree;
    for (const auto& e : graph.edges) {
        ++degree[e.src];
        ++degree[e.dst];
    }
    // (subject, relations, extension) -> leaf file nodes
    std::map<std::tuple<NodeId, std::string, std::string>, std::vector<NodeId>> families;
    for (const auto& e : graph.edges) {
        const auto* dst = graph.find_node(e.dst);
        if (!dst || dst->kind != NodeKind::File || degree[e.dst] != 1 || dst->generalized) {
            continue;
        }
        auto ext = extension_of(dst->label);
        if (ext.empty()) {
            continue;
        }
        std::string rel_key;
        for (const auto& r : e.relations) {
            rel_key += r.token() + ",";
        }
        families[{e.src, rel_key, ext}].push_back(e.dst);
    }

    for (const auto& [key, members] : families) {
        if (members.size() < std::max<std::size_t>(cfg.collapse_min, 2)) {
            continue;
        }
        const auto& ext = std::get<2>(key);
        std::vector<std::vector<std::string>> dirs;
        std::set<std::string> labels;
        for (NodeId id : members) {
            const auto* n = graph.find_node(id);
            labels.insert(n->label);
            auto segs = split_segments(n->label);
            segs.pop_back();
            dirs.push_back(std::move(segs));
        }
        std::size_t common = dirs.front().size();
        for (const auto& d : dirs) {
            std::size_t i = 0;
            while (i < common && i < d.size() && to_lower(d[i]) == to_lower(dirs.front()[i])) {
                ++i;
            }
            common = i;
        }
        const auto* first = graph.find_node(members.front());
        const char sep = separator_of(first->label);
        std::string label;
        for (std::size_t i = 0; i < common; ++i) {
            label += dirs.front()[i];
            label.push_back(sep);
        }
        label += std::string(kWildcard) + ext;

        const NodeId survivor = members.front();
        for (std::size_t i = 1; i < members.size(); ++i) {
            merge_nodes(graph, survivor, members[i]);
        }
        auto* node = graph.find_node(survivor);
        node->extra_labels.insert(node->label);
        node->extra_labels.insert(labels.begin(), labels.end());
        node->label = label;
        node->generalized = true;
        tidy_labels(*node);
    }
    return graph;
}

TechniqueGraph extract_technique_graph(std::span<const AuditEvent> events, const RunMeta& meta,
                                       const Whitelist& whitelist, const ExtractConfig& cfg) {
    auto windowed = window(events, meta.t_start - cfg.window_slack_ns, meta.t_end + cfg.window_slack_ns);
    if (windowed.empty()) {
        throw NoAttackEvents();
    }
    auto chain = build_process_chain(windowed, meta.initial_pid, cfg);
    auto selected = select_events(windowed, chain);
    auto kept = filter_objects(selected, whitelist);
    if (kept.empty()) {
        throw NoAttackEvents();
    }
    auto graph = build_event_graph(kept, chain, meta.technique_id, meta.procedure_id);
    return aggregate_edges(std::move(graph), cfg);
}

TechniqueGraph build_provenance_graph(std::span<const AuditEvent> events, const std::string& technique_id) {
    TechniqueGraph g;
    g.technique_id = technique_id;
    g.source_kind = SourceKind::Log;
    GraphBuilder b{g, {}};
    std::unordered_map<std::int64_t, NodeId> pid_nodes;
    std::map<std::pair<NodeKind, std::string>, NodeId> object_nodes;
    auto pid_node = [&](std::int64_t pid, const std::string& image, NodeKind kind) {
        auto it = pid_nodes.find(pid);
        if (it != pid_nodes.end()) {
            return it->second;
        }
        KnowledgeNode n;
        n.kind = kind;
        n.label = image.empty() ? "pid:" + std::to_string(pid) : image;
        NodeId id = b.node(std::move(n));
        pid_nodes.emplace(pid, id);
        return id;
    };
    for (const auto& ev : events) {
        auto relation = relation_for(ev.event_type, ev.event_name);
        if (!relation || ev.object.empty()) {
            continue;
        }
        if (ev.event_type == EventType::Thread && !crosses_process(ev)) {
            continue;
        }
        const NodeId src = pid_node(ev.pid, ev.subject_image, NodeKind::Process);
        NodeId dst = 0;
        if (is_creation(ev)) {
            if (!ev.object_pid) {
                continue;
            }
            dst = pid_node(*ev.object_pid, ev.object,
                           ev.event_type == EventType::Process ? NodeKind::Process : NodeKind::Thread);
        } else {
            auto kind = object_kind(ev.event_type);
            auto key = std::make_pair(kind, normalize_object(ev.object));
            auto it = object_nodes.find(key);
            if (it == object_nodes.end()) {
                KnowledgeNode n;
                n.kind = kind;
                n.label = ev.object;
                it = object_nodes.emplace(key, b.node(std::move(n))).first;
            }
            dst = it->second;
        }
        b.link(src, dst, *relation, ev.ts, {});
    }
    b.finish();
    return g;
}

}  // namespace tkg
