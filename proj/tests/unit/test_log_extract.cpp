#include <doctest.h>

#include "oracles.hpp"
#include "tkg/log_extract.hpp"
#include "tkg/metrics.hpp"
#include "tkg/synth.hpp"
#include "tkg/text.hpp"

using namespace tkg;

namespace {

AuditEvent ev(std::int64_t ts, EventType type, std::string name, std::int64_t pid, std::string image,
              std::string object, std::optional<std::int64_t> object_pid = std::nullopt) {
    AuditEvent e;
    e.ts = ts;
    e.event_type = type;
    e.event_name = std::move(name);
    e.pid = pid;
    e.subject_image = std::move(image);
    e.object = std::move(object);
    e.object_pid = object_pid;
    return e;
}

AuditEvent start(std::int64_t ts, std::int64_t parent, std::string parent_image, std::int64_t child,
                 std::string child_image) {
    return ev(ts, EventType::Process, "Start", parent, std::move(parent_image), std::move(child_image), child);
}

TechniqueTemplate load(const char* name) {
    return read_template(oracle::source_dir() / "data/templates" / name);
}

}  // namespace

TEST_CASE("relation table keeps only the audited rows") {
    CHECK(relation_for(EventType::Registry, "Open") == std::nullopt);
    CHECK(relation_for(EventType::Registry, "Close") == std::nullopt);
    CHECK(relation_for(EventType::Process, "End") == std::nullopt);
    CHECK(relation_for(EventType::Thread, "End") == std::nullopt);
    CHECK(relation_for(EventType::File, "FileioCreate") == std::nullopt);
    CHECK(relation_for(EventType::File, "Rename") == Relation::FileRename);
    CHECK(relation_for(EventType::Registry, "SetValue") == Relation::RegistrySetValue);
    CHECK(relation_for(EventType::Internet, "Send") == Relation::NetSend);
    CHECK(object_kind(EventType::Internet) == NodeKind::Network);
}

TEST_CASE("process chain") {
    SUBCASE("single start") {
        std::vector<AuditEvent> e{start(1, 10, "a.exe", 11, "b.exe")};
        auto chain = build_process_chain(e, 10);
        CHECK(chain.pids == std::set<std::int64_t>{10, 11});
        CHECK(chain.nodes.at(11).label == "b.exe");
    }
    SUBCASE("no creations") {
        std::vector<AuditEvent> e{ev(1, EventType::File, "Read", 10, "a.exe", "f")};
        CHECK(build_process_chain(e, 10).pids == std::set<std::int64_t>{10});
    }
    SUBCASE("three-level fork tree") {
        std::vector<AuditEvent> e{start(1, 10, "p0.exe", 11, "p1.exe"), start(2, 11, "p1.exe", 12, "p2.exe"),
                                  start(3, 11, "p1.exe", 13, "p3.exe"), start(4, 99, "x.exe", 98, "y.exe")};
        CHECK(build_process_chain(e, 10).pids == std::set<std::int64_t>{10, 11, 12, 13});
    }
    SUBCASE("unknown initial pid") {
        std::vector<AuditEvent> e{ev(1, EventType::File, "Read", 10, "a.exe", "f")};
        CHECK_THROWS_AS(build_process_chain(e, 77), UnknownPid);
    }
}

TEST_CASE("event selection") {
    std::vector<AuditEvent> e{start(1, 10, "a.exe", 11, "b.exe"),
                              ev(2, EventType::Registry, "Open", 11, "b.exe", R"(HKLM\K)"),
                              ev(3, EventType::File, "Rename", 11, "b.exe", R"(C:\x.txt)"),
                              ev(4, EventType::File, "Write", 50, "c.exe", R"(C:\y.txt)"),
                              ev(5, EventType::Thread, "Start", 11, "b.exe", "b.exe", 11)};
    auto chain = build_process_chain(e, 10);
    auto kept = select_events(e, chain);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].event_type == EventType::Process);
    CHECK(kept[1].event_name == "Rename");
}

TEST_CASE("whitelist construction and filtering") {
    std::vector<AuditEvent> benign{ev(1, EventType::Registry, "Query", 5, "svc.exe", R"(HKLM\Software\\K)")};
    auto wl = build_whitelist(benign);
    CHECK(wl.contains(NodeKind::Registry, normalize_object(R"(HKLM\Software\K)")));
    CHECK(wl.contains(NodeKind::Registry, R"(hklm\software\k)"));
    CHECK_FALSE(wl.contains(NodeKind::File, R"(hklm\software\k)"));
    CHECK(build_whitelist({}).size() == 0);

    std::vector<AuditEvent> run{ev(2, EventType::Registry, "Query", 10, "a.exe", R"(HKLM\SOFTWARE\K)"),
                                ev(3, EventType::Registry, "Query", 10, "a.exe", R"(HKLM\SOFTWARE\New)")};
    auto kept = filter_objects(run, wl);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].object == R"(HKLM\SOFTWARE\New)");

    auto path = oracle::scratch_dir("whitelist") / "wl.json";
    write_whitelist(path, wl);
    CHECK(read_whitelist(path).labels == wl.labels);
}

TEST_CASE("synthetic benign capture yields the generator's object count") {
    for (const char* name : {"t1547_001_run_key.json", "t1105_certutil.json"}) {
        for (bool leak : {false, true}) {
            RunOptions opt;
            opt.whitelist_leak = leak;
            auto run = generate_run(load(name), NoiseProfile{}, 3, opt);
            CHECK(build_whitelist(run.benign).size() == run.benign_object_count);
        }
    }
}

TEST_CASE("after filtering exactly the injected objects survive") {
    auto tmpl = load("t1003_001_lsass_comsvcs.json");
    auto run = generate_run(tmpl, NoiseProfile{}, 21);
    auto span = window(run.events, run.meta.t_start, run.meta.t_end);
    auto chain = build_process_chain(span, run.meta.initial_pid);
    auto kept = filter_objects(select_events(span, chain), build_whitelist(run.benign));
    std::set<std::string> objects, expected;
    for (const auto& e : kept) {
        if (e.event_type != EventType::Process && e.event_type != EventType::Thread) {
            objects.insert(e.object);
        }
    }
    for (const auto& n : run.truth.nodes) {
        if (n.kind != NodeKind::Process && n.kind != NodeKind::Attacker) {
            expected.insert(n.label);
        }
    }
    CHECK(objects == expected);
}

TEST_CASE("aggregation") {
    std::vector<AuditEvent> e{ev(1, EventType::File, "Read", 10, "a.exe", R"(C:\f.txt)"),
                              ev(2, EventType::File, "Write", 10, "a.exe", R"(C:\f.txt)")};
    auto chain = build_process_chain(e, 10);
    auto g = aggregate_edges(build_event_graph(e, chain, "T1000", "p"));
    REQUIRE(g.edges.size() == 2);  // attacker edge plus the merged file edge
    const auto& fe = g.edges.back().relations.size() == 2 ? g.edges.back() : g.edges.front();
    CHECK(fe.relations == std::set<EdgeRelation>{Relation::FileRead, Relation::FileWrite});
    CHECK(fe.timestamps == std::vector<std::int64_t>{1, 2});
    CHECK(aggregate_edges(g) == g);
}

TEST_CASE("fifty sibling documents collapse into one node") {
    std::vector<AuditEvent> e;
    for (int i = 0; i < 50; ++i) {
        e.push_back(ev(i + 1, EventType::File, "Read", 10, "a.exe", R"(C:\Users\u\Documents\doc)" + std::to_string(i) + ".doc"));
    }
    e.push_back(ev(60, EventType::File, "Read", 10, "a.exe", R"(C:\Users\u\Documents\notes.txt)"));
    auto chain = build_process_chain(e, 10);
    auto g = aggregate_edges(build_event_graph(e, chain, "T1000", "p"));
    std::size_t files = 0;
    for (const auto& n : g.nodes) {
        if (n.kind != NodeKind::File) {
            continue;
        }
        ++files;
        if (n.generalized) {
            CHECK(n.extra_labels.size() == 50);
            CHECK(wildcard_match(n.label, R"(C:\Users\u\Documents\doc7.doc)"));
        }
    }
    CHECK(files == 2);
    CHECK(validate(g).empty());
}

TEST_CASE("registry-run-key run reproduces the truth graph") {
    auto run = generate_run(load("t1547_001_run_key.json"), NoiseProfile{}, 42);
    auto g = extract_technique_graph(run.events, run.meta, build_whitelist(run.benign));
    CHECK(g.nodes.size() == 6);
    CHECK(g.edges.size() == 5);
    auto r = compare_graphs(g, run.truth, LabelMatch::Exact);
    CHECK(r.node_fp + r.node_fn + r.edge_fp + r.edge_fn == 0);
    CHECK(validate(g).empty());
}

TEST_CASE("no attack events") {
    auto run = generate_run(load("t1547_001_run_key.json"), NoiseProfile{}, 1);
    auto wl = build_whitelist(run.benign);
    RunMeta before = run.meta;
    before.t_start = run.events.front().ts - 10'000'000'000LL;
    before.t_end = before.t_start + 1;
    CHECK_THROWS_AS(extract_technique_graph(run.events, before, wl), NoAttackEvents);

    // only whitelisted objects touched by the initial process inside the window
    std::vector<AuditEvent> benign_only{ev(100, EventType::Registry, "Query", 10, "a.exe", R"(HKLM\K)"),
                                        ev(200, EventType::File, "Read", 10, "a.exe", R"(C:\x)")};
    auto wl2 = build_whitelist(benign_only);
    RunMeta meta{"T1000", "p", 10, 100, 200};
    CHECK_THROWS_AS(extract_technique_graph(benign_only, meta, wl2), NoAttackEvents);
}

TEST_CASE("provenance graph covers every pid") {
    auto run = generate_run(load("t1082_systeminfo.json"), NoiseProfile{}, 2);
    auto g = build_provenance_graph(run.events, "T0000");
    std::set<std::int64_t> pids;
    for (const auto& e : run.events) {
        pids.insert(e.pid);
    }
    std::size_t procs = 0;
    for (const auto& n : g.nodes) {
        procs += n.kind == NodeKind::Process || n.kind == NodeKind::Thread;
    }
    CHECK(procs >= pids.size());
    CHECK(validate(g).empty());
}
