#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tkg/graph.hpp"

using namespace tkg;

namespace {

KnowledgeNode node(NodeKind kind, std::string label) {
    KnowledgeNode n;
    n.kind = kind;
    n.label = std::move(label);
    n.provenance = {"log:p1"};
    return n;
}

TechniqueGraph with_attacker() {
    TechniqueGraph g;
    g.technique_id = "T1547.001";
    g.add_node(node(NodeKind::Attacker, "attacker"));
    return g;
}

}  // namespace

TEST_CASE("compute_levels on a path graph") {
    auto g = with_attacker();
    auto p1 = g.add_node(node(NodeKind::Process, "p1.exe"));
    auto f1 = g.add_node(node(NodeKind::File, R"(C:\f1.txt)"));
    g.add_edge(0, p1, {Relation::ProcessStart});
    g.add_edge(p1, f1, {Relation::FileWrite});
    auto levels = compute_levels(g);
    CHECK(levels == std::map<NodeId, std::uint32_t>{{0, 0}, {p1, 1}, {f1, 2}});
}

TEST_CASE("compute_levels on a lone attacker and without one") {
    auto g = with_attacker();
    CHECK(compute_levels(g) == std::map<NodeId, std::uint32_t>{{0, 0}});
    TechniqueGraph empty;
    empty.technique_id = "T1000";
    CHECK_THROWS_AS(compute_levels(empty), MissingAttacker);
}

TEST_CASE("compute_levels on a 7-node diamond matches the oracle") {
    auto g = with_attacker();
    std::vector<NodeId> ids;
    for (int i = 0; i < 6; ++i) {
        ids.push_back(g.add_node(node(NodeKind::Process, "p" + std::to_string(i) + ".exe")));
    }
    g.add_edge(0, ids[0], {Relation::ProcessStart});
    g.add_edge(ids[0], ids[1], {Relation::ProcessStart});
    g.add_edge(ids[0], ids[2], {Relation::ProcessStart});
    g.add_edge(ids[1], ids[3], {Relation::ProcessStart});
    g.add_edge(ids[2], ids[3], {Relation::ProcessStart});
    g.add_edge(ids[3], ids[4], {Relation::ProcessStart});
    // ids[5] stays unreachable
    auto levels = compute_levels(g);
    CHECK(levels == oracle::levels(g));
    CHECK(levels.at(ids[3]) == 3);
    CHECK(levels.at(ids[5]) == kUnreachable);
}

TEST_CASE("compute_levels agrees with Floyd-Warshall on random graphs") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        auto g = oracle::random_graph(rng, 12, SourceKind::Log, "p");
        CHECK(compute_levels(g) == oracle::levels(g));
    }
}

TEST_CASE("validate reports dangling and duplicate edges") {
    auto g = with_attacker();
    auto p = g.add_node(node(NodeKind::Process, "a.exe"));
    g.add_edge(0, p, {Relation::ProcessStart});
    CHECK(validate(g).empty());

    auto dangling = g;
    dangling.edges.push_back({3, 9, {Relation::FileRead}, {}, {}});
    dangling.nodes.push_back(node(NodeKind::Process, "b.exe"));
    dangling.nodes.back().id = 3;
    CHECK(validate(dangling) == std::vector<std::string>{"edge 3→9: unknown node 9"});

    auto dup = g;
    dup.edges.push_back(dup.edges.front());
    auto v = validate(dup);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("0→1") != std::string::npos);
    CHECK(v[0].find("duplicate") != std::string::npos);
}

TEST_CASE("validate enforces attacker and relation rules") {
    auto g = with_attacker();
    auto p = g.add_node(node(NodeKind::Process, "a.exe"));
    g.add_edge(0, p, {EdgeRelation::text("uses")}, {}, {"log:p1"});
    CHECK(validate(g).size() == 1);
    g.edges[0].provenance.insert("cti:r1");
    CHECK(validate(g).empty());

    g.source_kind = SourceKind::Unified;
    g.add_node(node(NodeKind::File, "orphan.txt"));
    auto v = validate(g);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == "node 2: not connected to the attacker");

    auto two = with_attacker();
    two.add_node(node(NodeKind::Attacker, "attacker"));
    CHECK(!validate(two).empty());
    two.technique_id = "X1";
    CHECK(validate(two).size() == 2);
}

TEST_CASE("add_edge unions records and ignores self-loops") {
    auto g = with_attacker();
    auto p = g.add_node(node(NodeKind::Process, "a.exe"));
    auto f = g.add_node(node(NodeKind::File, "f.txt"));
    g.add_edge(p, f, {Relation::FileRead}, {20, 10});
    g.add_edge(p, f, {Relation::FileWrite}, {15, 10}, {"log:x"});
    g.add_edge(p, p, {Relation::ProcessStart});
    REQUIRE(g.edges.size() == 1);
    CHECK(g.edges[0].relations == std::set<EdgeRelation>{Relation::FileRead, Relation::FileWrite});
    CHECK(g.edges[0].timestamps == std::vector<std::int64_t>{10, 15, 20});
    CHECK(g.edges[0].provenance == std::set<std::string>{"log:x"});
}

TEST_CASE("merge_nodes keeps every label and rewires edges") {
    auto g = with_attacker();
    auto a = g.add_node(node(NodeKind::File, "a.txt"));
    auto b = g.add_node(node(NodeKind::File, "b.txt"));
    auto p = g.add_node(node(NodeKind::Process, "p.exe"));
    g.nodes[2].generalized = true;
    g.nodes[2].provenance = {"log:p2"};
    g.add_edge(0, p, {Relation::ProcessStart});
    g.add_edge(p, a, {Relation::FileRead});
    g.add_edge(p, b, {Relation::FileWrite});
    g.add_edge(a, b, {Relation::FileRename});
    merge_nodes(g, a, b);
    CHECK(g.nodes.size() == 3);
    const auto* s = g.find_node(a);
    REQUIRE(s);
    CHECK(s->label == "a.txt");
    CHECK(s->extra_labels == std::set<std::string>{"b.txt"});
    CHECK(s->provenance == std::set<std::string>{"log:p1", "log:p2"});
    CHECK(s->generalized);
    REQUIRE(g.edges.size() == 2);
    CHECK(validate(g).empty());
    for (const auto& e : g.edges) {
        if (e.src == p) {
            CHECK(e.relations == std::set<EdgeRelation>{Relation::FileRead, Relation::FileWrite});
        }
    }
}

TEST_CASE("canonicalize is invariant under id permutation") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 100; ++round) {
        auto g = oracle::random_graph(rng, 10, SourceKind::Log, "p");
        // shuffle ids by an affine map and reverse node storage
        TechniqueGraph h = g;
        std::map<NodeId, NodeId> remap;
        for (const auto& n : g.nodes) {
            remap[n.id] = n.id * 7 + 3;
        }
        for (auto& n : h.nodes) {
            n.id = remap[n.id];
        }
        for (auto& e : h.edges) {
            e.src = remap[e.src];
            e.dst = remap[e.dst];
        }
        std::reverse(h.nodes.begin(), h.nodes.end());
        std::reverse(h.edges.begin(), h.edges.end());
        CHECK(structurally_equal(g, h));
        CHECK(canonicalize(g) == canonicalize(h));
    }
}

TEST_CASE("structurally_equal separates different graphs") {
    auto g = with_attacker();
    auto p = g.add_node(node(NodeKind::Process, "a.exe"));
    g.add_edge(0, p, {Relation::ProcessStart});
    auto h = g;
    h.edges[0].relations = {Relation::ProcessDCStart};
    CHECK_FALSE(structurally_equal(g, h));
    h = g;
    h.nodes[1].label = "b.exe";
    CHECK_FALSE(structurally_equal(g, h));
}

TEST_CASE("edge relation tokens round-trip") {
    for (int r = 0; r <= static_cast<int>(Relation::ImageDCStart); ++r) {
        EdgeRelation rel(static_cast<Relation>(r));
        CHECK(EdgeRelation::from_token(rel.token()) == rel);
    }
    auto t = EdgeRelation::text("downloads from");
    CHECK(t.token() == "text:downloads from");
    CHECK(EdgeRelation::from_token(t.token()) == t);
    CHECK(relations_compatible({Relation::FileRead}, {Relation::FileRead, Relation::FileWrite}));
    CHECK_FALSE(relations_compatible({Relation::FileRead}, {Relation::FileWrite}));
    CHECK(relations_compatible({EdgeRelation::text("reads")}, {Relation::FileWrite}));
}

TEST_CASE("technique ids") {
    CHECK(is_technique_id("T1003"));
    CHECK(is_technique_id("T1003.001"));
    CHECK_FALSE(is_technique_id("T103"));
    CHECK_FALSE(is_technique_id("T1003.01"));
    CHECK_FALSE(is_technique_id("t1003"));
}
