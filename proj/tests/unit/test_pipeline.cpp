#include <doctest.h>

#include "oracles.hpp"
#include "tkg/cti.hpp"
#include "tkg/log_extract.hpp"
#include "tkg/metrics.hpp"
#include "tkg/pipeline.hpp"
#include "tkg/serialize.hpp"
#include "tkg/synth.hpp"
#include "tkg/text.hpp"

using namespace tkg;
namespace fs = std::filesystem;

namespace {

// Generated runs that share their whitelist and model fixtures.
fs::path make_bundle(const std::string& name, const std::vector<std::pair<const char*, std::uint64_t>>& runs,
                     bool with_reports = true) {
    auto dir = oracle::scratch_dir(name);
    std::vector<AuditEvent> benign;
    nlohmann::json cfg;
    cfg["schema_version"] = kPipelineSchemaVersion;
    cfg["output_dir"] = "out";
    cfg["whitelist"] = "whitelist.json";
    cfg["runs"] = nlohmann::json::array();
    fs::create_directories(dir / "reports");
    fs::create_directories(dir / "store");
    for (std::size_t i = 0; i < runs.size(); ++i) {
        auto tmpl = read_template(oracle::source_dir() / "data/templates" / runs[i].first);
        auto run = generate_run(tmpl, NoiseProfile{}, runs[i].second);
        auto rd = dir / ("run" + std::to_string(i));
        write_run(run, rd);
        benign.insert(benign.end(), run.benign.begin(), run.benign.end());
        cfg["runs"].push_back({{"events", (rd / "events.jsonl").string()},
                               {"meta", (rd / "meta.json").string()},
                               {"script", (rd / "script.ps1").string()}});
        if (with_reports) {
            for (const char* sub : {"reports", "store"}) {
                for (const auto& f : fs::directory_iterator(rd / sub)) {
                    fs::copy_file(f.path(), dir / sub / f.path().filename(), fs::copy_options::overwrite_existing);
                }
            }
        }
    }
    write_whitelist(dir / "whitelist.json", build_whitelist(benign));
    cfg["reports_dir"] = "reports";
    cfg["client"] = {{"mode", "fixture"}, {"fixture_store", "store"}};
    cfg["workers"] = 2;
    write_text_file(dir / "pipeline.json", cfg.dump(2));
    return dir;
}

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), dir).generic_string()] = read_text_file(e.path());
        }
    }
    return out;
}

}  // namespace

TEST_CASE("full bundle yields one unified graph per technique") {
    auto dir = make_bundle("pipeline-full", {{"t1547_001_run_key.json", 1}, {"t1547_001_run_key.json", 2},
                                             {"t1105_certutil.json", 3}});
    auto cfg = read_pipeline_config(dir / "pipeline.json");
    auto manifest = run_pipeline(cfg);
    CHECK(manifest.ok());
    CHECK(manifest.errors.empty());
    CHECK(manifest.techniques == std::vector<std::string>{"T1105", "T1547.001"});
    for (const char* tech : {"T1105", "T1547.001"}) {
        auto unified = read_gml_file(dir / "out" / tech / "unified.gml");
        CHECK(unified.source_kind == SourceKind::Unified);
        CHECK(validate(unified).empty());
        CHECK(fs::exists(dir / "out" / tech / "merge-cross-report.json"));
    }
    auto merged = read_gml_file(dir / "out/T1547.001/merged-log.gml");
    auto report = merge_report_from_json(nlohmann::json::parse(read_text_file(dir / "out/T1547.001/merge-log-report.json")));
    CHECK(report.input_graph_count == 2);
    CHECK(report.nodes_after == merged.nodes.size());

    // manifest hashes match the written files
    auto doc = nlohmann::json::parse(read_text_file(dir / "out/manifest.json"));
    CHECK(doc["artifacts"].size() == manifest.artifacts.size());
    for (const auto& a : manifest.artifacts) {
        CHECK(sha256_hex(read_text_file(dir / "out" / a.path)) == a.sha256);
    }
    CHECK(std::is_sorted(manifest.artifacts.begin(), manifest.artifacts.end(),
                         [](const Artifact& x, const Artifact& y) { return x.path < y.path; }));
    // two runs of one procedure must not overwrite each other
    CHECK(std::adjacent_find(manifest.artifacts.begin(), manifest.artifacts.end(), [](const Artifact& x, const Artifact& y) {
              return x.path == y.path;
          }) == manifest.artifacts.end());
    CHECK(fs::exists(dir / "out/T1547.001/log/run-key-reg-add-2.gml"));
}

TEST_CASE("reruns are byte-identical") {
    auto dir = make_bundle("pipeline-rerun", {{"t1082_systeminfo.json", 4}, {"t1003_001_lsass_comsvcs.json", 5}});
    auto cfg = read_pipeline_config(dir / "pipeline.json");
    REQUIRE(run_pipeline(cfg).ok());
    auto first = tree_bytes(dir / "out");
    fs::remove_all(dir / "out");
    cfg.workers = 1;
    REQUIRE(run_pipeline(cfg).ok());
    CHECK(tree_bytes(dir / "out") == first);
}

TEST_CASE("configuration errors surface before any work") {
    auto dir = make_bundle("pipeline-bad", {{"t1547_001_run_key.json", 1}});
    auto doc = nlohmann::json::parse(read_text_file(dir / "pipeline.json"));

    auto no_wl = doc;
    no_wl.erase("whitelist");
    CHECK_THROWS_AS(pipeline_config_from_json(no_wl, dir), ConfigError);

    auto missing = doc;
    missing["whitelist"] = "nope.json";
    auto cfg = pipeline_config_from_json(missing, dir);
    CHECK_THROWS_AS(run_pipeline(cfg), ConfigError);
    CHECK_FALSE(fs::exists(dir / "out"));

    auto version = doc;
    version["schema_version"] = 99;
    CHECK_THROWS_AS(pipeline_config_from_json(version, dir), ConfigError);

    auto both = doc;
    both["runs"][0]["ast"] = both["runs"][0]["script"];
    CHECK_THROWS_AS(validate_pipeline_config(pipeline_config_from_json(both, dir)), ConfigError);

    auto threshold = doc;
    threshold["detection_threshold"] = 2.0;
    CHECK_THROWS(validate_pipeline_config(pipeline_config_from_json(threshold, dir)));

    CHECK_THROWS_AS(read_pipeline_config(oracle::source_dir() / "tests/data/pipeline-no-whitelist.json"), ConfigError);
}

TEST_CASE("without reports the merged log graph is promoted") {
    auto dir = make_bundle("pipeline-noreports", {{"t1547_001_run_key.json", 6}}, false);
    auto cfg = read_pipeline_config(dir / "pipeline.json");
    auto manifest = run_pipeline(cfg);
    CHECK(manifest.ok());
    REQUIRE_FALSE(manifest.warnings.empty());
    auto unified = read_gml_file(dir / "out/T1547.001/unified.gml");
    auto merged = read_gml_file(dir / "out/T1547.001/merged-log.gml");
    CHECK(unified.source_kind == SourceKind::Unified);
    CHECK(unified.nodes == merged.nodes);
    CHECK(unified.edges == merged.edges);
}

TEST_CASE("report failures and exit semantics") {
    auto dir = make_bundle("pipeline-errors", {{"t1547_001_run_key.json", 7}});
    // a report whose answer is empty is skipped, not fatal
    ReportDoc vague{"vague", "T1547.001", "Nothing concrete here.", "notes"};
    write_text_file(dir / "reports/vague.json",
                    nlohmann::json{{"report_id", vague.report_id}, {"technique_id", vague.technique_id},
                                   {"source_name", vague.source_name}, {"text", vague.text}}
                        .dump());
    fixture_store_put(dir / "store", build_prompt(vague), R"({"entities":[],"relations":[]})");
    auto cfg = read_pipeline_config(dir / "pipeline.json");
    auto manifest = run_pipeline(cfg);
    REQUIRE(manifest.errors.size() == 1);
    CHECK_FALSE(manifest.errors[0].fatal);
    CHECK(manifest.ok());
    CHECK(fs::exists(dir / "out/T1547.001/unified.gml"));

    // a report with no stored answer is fatal for its technique
    write_text_file(dir / "reports/unknown.json",
                    R"({"report_id":"unknown","technique_id":"T1547.001","source_name":"x","text":"reg.exe wrote a key"})");
    fs::remove_all(dir / "out");
    auto failed = run_pipeline(cfg);
    CHECK_FALSE(failed.ok());
    bool fatal = std::any_of(failed.errors.begin(), failed.errors.end(), [](const StageError& e) { return e.fatal; });
    CHECK(fatal);
    CHECK(manifest_to_json(failed)["errors"].size() == failed.errors.size());

    // a report for a technique without runs only warns
    fs::remove(dir / "reports/unknown.json");
    write_text_file(dir / "reports/other.json",
                    R"({"report_id":"other","technique_id":"T1018","source_name":"x","text":"net view"})");
    fs::remove_all(dir / "out");
    auto warned = run_pipeline(cfg);
    CHECK(warned.ok());
    bool mentions = std::any_of(warned.warnings.begin(), warned.warnings.end(),
                                [](const std::string& w) { return w.find("T1018") != std::string::npos; });
    CHECK(mentions);
}

TEST_CASE("extract_run supplements from the script") {
    auto tmpl = read_template(oracle::source_dir() / "data/templates/t1547_001_run_key.json");
    RunOptions opt;
    opt.whitelist_leak = true;
    auto run = generate_run(tmpl, NoiseProfile{}, 11, opt);
    auto dir = oracle::scratch_dir("pipeline-extract");
    write_run(run, dir);
    RunInput in{dir / "events.jsonl", dir / "meta.json", dir / "script.ps1", std::nullopt};
    auto g = extract_run(in, build_whitelist(run.benign));
    auto r = compare_graphs(g, run.truth, LabelMatch::Exact);
    CHECK(r.node_fn == 0);
    CHECK(r.node_fp == 0);
    CHECK(r.edge_fn == 0);

    write_text_file(dir / "ast.json", ast_to_json(parse_script(*run.script)).dump());
    RunInput via_ast{dir / "events.jsonl", dir / "meta.json", std::nullopt, dir / "ast.json"};
    CHECK(static_candidates(via_ast) == static_candidates(in));
}
