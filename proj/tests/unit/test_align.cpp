#include <doctest.h>

#include "oracles.hpp"
#include "tkg/align.hpp"
#include "tkg/synth.hpp"

using namespace tkg;

namespace {

KnowledgeNode node(NodeKind kind, std::string label) {
    KnowledgeNode n;
    n.kind = kind;
    n.label = std::move(label);
    return n;
}

TechniqueTemplate load(const char* name) { return read_template(oracle::source_dir() / "data/templates" / name); }

AlignmentResult step(std::string id, std::int64_t start, std::map<NodeId, NodeId> map) {
    AlignmentResult r;
    r.technique_id = std::move(id);
    r.score = 1.0;
    r.window = std::pair{start, start + 10};
    r.node_map = std::move(map);
    return r;
}

}  // namespace

TEST_CASE("a graph aligns to itself") {
    auto run = generate_run(load("t1547_001_run_key.json"), NoiseProfile{}, 4);
    auto r = align_technique(run.truth, run.truth);
    CHECK(r.score == doctest::Approx(1.0));
    CHECK(r.matched_edges + 1 == run.truth.edges.size());  // the attacker edge is not scored
    for (const auto& [t, p] : r.node_map) {
        CHECK(t == p);
    }
    CHECK(r.node_map.size() + 1 == run.truth.nodes.size());
}

TEST_CASE("no shared process means no alignment") {
    TechniqueGraph a;
    a.technique_id = "T1000";
    a.add_node(node(NodeKind::Attacker, "attacker"));
    auto p = a.add_node(node(NodeKind::Process, "alpha.exe"));
    a.add_edge(0, p, {Relation::ProcessStart}, {}, {});
    auto b = a;
    b.nodes[1].label = "omega.exe";
    auto r = align_technique(a, b);
    CHECK(r.score == 0.0);
    CHECK(r.node_map.empty());
}

TEST_CASE("embedded techniques are recovered exactly") {
    const char* names[] = {"t1547_001_run_key.json", "t1003_001_lsass_comsvcs.json", "t1053_005_schtasks.json",
                           "t1105_certutil.json", "t1082_systeminfo.json"};
    for (const char* name : names) {
        auto tmpl = load(name);
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            CAPTURE(name);
            CAPTURE(seed);
            auto e = embed_technique(tmpl, seed);
            CHECK(validate(e.prov).empty());
            auto r = align_technique(e.truth, e.prov);
            CHECK(r.score >= 0.9);
            CHECK(r.node_map == e.injection);
        }
    }
}

TEST_CASE("detection thresholds and ordering") {
    auto e = embed_technique(load("t1105_certutil.json"), 7);
    CHECK(detect_techniques(e.prov, {}).empty());

    std::vector<TechniqueGraph> kb;
    for (const char* name : {"t1105_certutil.json", "t1082_systeminfo.json", "t1547_001_run_key.json"}) {
        kb.push_back(generate_run(load(name), NoiseProfile{}, 3).truth);
    }
    auto all = detect_techniques(e.prov, kb, 0.0);
    CHECK(all.size() == kb.size());
    CHECK(std::is_sorted(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.score > b.score; }));
    auto hits = detect_techniques(e.prov, kb);
    REQUIRE_FALSE(hits.empty());
    CHECK(hits.front().technique_id == "T1105");
    CHECK(alignment_to_json(hits.front())["technique_id"] == "T1105");
}

TEST_CASE("attack chain linking") {
    TechniqueGraph prov;
    SUBCASE("two steps sharing a file") {
        auto chain = build_attack_chain({step("T1105", 20, {{1, 7}, {2, 9}}), step("T1059.001", 10, {{1, 3}, {2, 7}})}, prov);
        REQUIRE(chain.steps.size() == 2);
        CHECK(chain.steps[0].technique_id == "T1059.001");
        REQUIRE(chain.links.size() == 1);
        CHECK(chain.links[0].shared_nodes == std::vector<NodeId>{7});
    }
    SUBCASE("single step") {
        auto chain = build_attack_chain({step("T1105", 20, {{1, 7}})}, prov);
        CHECK(chain.steps.size() == 1);
        CHECK(chain.links.empty());
    }
    SUBCASE("disjoint steps") {
        auto chain = build_attack_chain({step("T1105", 20, {{1, 7}}), step("T1082", 30, {{1, 8}})}, prov);
        CHECK(chain.links.empty());
    }
}
