#include <doctest.h>

#include "oracles.hpp"
#include "tkg/serialize.hpp"
#include "tkg/synth.hpp"

using namespace tkg;

namespace {

nlohmann::json template_doc() {
    return nlohmann::json::parse(read_text_file(oracle::source_dir() / "data/templates/t1547_001_run_key.json"));
}

std::string dir_bytes(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) {
        all += std::filesystem::relative(f, dir).generic_string() + "\n" + read_text_file(f);
    }
    return all;
}

}  // namespace

TEST_CASE("SplitMix64 reference outputs") {
    // published sequence for seed 0
    SplitMix64 r(0);
    CHECK(r.next() == 0xE220A8397B1DCDAFULL);
    CHECK(r.next() == 0x6E789E6AA1B965F4ULL);
    CHECK(r.next() == 0x06C45D188009454FULL);
    SplitMix64 u(1);
    for (int i = 0; i < 1000; ++i) {
        auto x = u.unit();
        CHECK((x >= 0.0 && x < 1.0));
        CHECK(u.below(7) < 7);
    }
}

TEST_CASE("same seed gives byte-identical fixtures") {
    auto tmpl = read_template(oracle::source_dir() / "data/templates/t1547_001_run_key.json");
    auto a = oracle::scratch_dir("synth-a");
    auto b = oracle::scratch_dir("synth-b");
    write_run(generate_run(tmpl, NoiseProfile{}, 42), a);
    write_run(generate_run(tmpl, NoiseProfile{}, 42), b);
    CHECK(dir_bytes(a) == dir_bytes(b));
    auto c = oracle::scratch_dir("synth-c");
    write_run(generate_run(tmpl, NoiseProfile{}, 43), c);
    CHECK(dir_bytes(a) != dir_bytes(c));
    for (const char* name : {"events.jsonl", "meta.json", "truth.gml", "benign.jsonl", "whitelist.json", "script.ps1"}) {
        CHECK(std::filesystem::exists(a / name));
    }
}

TEST_CASE("zero noise holds exactly the template events") {
    auto tmpl = read_template(oracle::source_dir() / "data/templates/t1003_001_lsass_comsvcs.json");
    NoiseProfile quiet;
    quiet.event_count = 0;
    auto run = generate_run(tmpl, quiet, 3);
    CHECK(run.events.size() == tmpl.edges.size());
    CHECK(run.injected_event_count == tmpl.edges.size());
    CHECK(std::is_sorted(run.events.begin(), run.events.end(),
                         [](const AuditEvent& x, const AuditEvent& y) { return x.ts < y.ts; }));
    std::multiset<std::int64_t> offsets, seen;
    for (const auto& e : tmpl.edges) {
        offsets.insert(e.offset_ms * 1'000'000);
    }
    for (const auto& e : run.events) {
        seen.insert(e.ts - run.meta.t_start);
    }
    CHECK(seen == offsets);
    CHECK(run.meta.t_end == run.events.back().ts);
}

TEST_CASE("truth graphs are valid and match the template") {
    for (const auto& entry : std::filesystem::directory_iterator(oracle::source_dir() / "data/templates")) {
        CAPTURE(entry.path().filename().string());
        auto tmpl = read_template(entry.path());
        auto run = generate_run(tmpl, NoiseProfile{}, 17);
        CHECK(validate(run.truth).empty());
        CHECK(run.truth.nodes.size() == tmpl.nodes.size() + 1);
        CHECK(run.truth.edges.size() == tmpl.edges.size() + 1);
        CHECK(run.injected_event_count == tmpl.edges.size());
        CHECK(run.events.size() == NoiseProfile{}.event_count + tmpl.edges.size());
        CHECK(run.meta.technique_id == tmpl.technique_id);
        for (const auto& n : run.truth.nodes) {
            CHECK(n.label.find('{') == std::string::npos);
        }
        REQUIRE(run.report);
        REQUIRE(run.model_answer);
        CHECK(nlohmann::json::parse(*run.model_answer).is_object());
    }
}

TEST_CASE("template validation") {
    CHECK_NOTHROW(template_from_json(template_doc()));

    auto dup = template_doc();
    dup["nodes"].push_back(dup["nodes"][0]);
    CHECK_THROWS_AS(template_from_json(dup), SchemaError);

    auto unknown = template_doc();
    unknown["edges"][0]["dst"] = "nowhere";
    CHECK_THROWS_AS(template_from_json(unknown), SchemaError);

    auto wrong_kind = template_doc();
    for (auto& e : wrong_kind["edges"]) {
        if (e["relation"] == "RegistrySetValue") {
            e["relation"] = "FileWrite";
        }
    }
    CHECK_THROWS_AS(template_from_json(wrong_kind), SchemaError);

    auto bad_initial = template_doc();
    bad_initial["initial"] = "runkey";
    CHECK_THROWS_AS(template_from_json(bad_initial), SchemaError);
}

TEST_CASE("noise profile validation") {
    NoiseProfile d;
    auto doc = noise_profile_to_json(d);
    auto back = noise_profile_from_json(doc);
    CHECK(back.event_count == d.event_count);
    CHECK(back.mix == d.mix);

    auto skewed = doc;
    skewed["mix"]["File"] = 0.9;
    CHECK_THROWS_AS(noise_profile_from_json(skewed), SchemaError);
    auto frac = doc;
    frac["chain_noise_fraction"] = 1.5;
    CHECK_THROWS_AS(noise_profile_from_json(frac), SchemaError);
}

TEST_CASE("whitelist leak is recorded") {
    auto tmpl = read_template(oracle::source_dir() / "data/templates/t1053_005_schtasks.json");
    RunOptions opt;
    opt.whitelist_leak = true;
    auto run = generate_run(tmpl, NoiseProfile{}, 5, opt);
    REQUIRE(run.leaked_object);
    bool in_benign = std::any_of(run.benign.begin(), run.benign.end(),
                                 [&](const AuditEvent& e) { return e.object == *run.leaked_object; });
    CHECK(in_benign);
    CHECK_FALSE(generate_run(tmpl, NoiseProfile{}, 5).leaked_object);
}
