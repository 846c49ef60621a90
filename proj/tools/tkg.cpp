#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkg/align.hpp"
#include "tkg/cti.hpp"
#include "tkg/events.hpp"
#include "tkg/log_extract.hpp"
#include "tkg/merge.hpp"
#include "tkg/metrics.hpp"
#include "tkg/model_client.hpp"
#include "tkg/pipeline.hpp"
#include "tkg/script_ast.hpp"
#include "tkg/serialize.hpp"
#include "tkg/synth.hpp"

namespace fs = std::filesystem;
using namespace tkg;

namespace {

nlohmann::json read_json(const fs::path& path) {
    auto doc = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (doc.is_discarded()) {
        throw ParseError(path.string() + ": not valid JSON");
    }
    return doc;
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

MergeConfig merge_config_at(const std::string& path) {
    return path.empty() ? MergeConfig{} : merge_config_from_json(read_json(path));
}

std::vector<TechniqueGraph> read_graphs(const std::vector<std::string>& paths) {
    std::vector<TechniqueGraph> out;
    for (const auto& p : paths) {
        out.push_back(read_gml_file(p));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Technique knowledge graphs from audit logs, scripts and threat reports"};
    app.require_subcommand(1);
    int status = 0;

    // extract-log
    struct {
        std::string events, meta, whitelist, benign, out;
    } xl;
    auto* extract_log = app.add_subcommand("extract-log", "Technique graph from one audit-log run");
    extract_log->add_option("--events", xl.events, "event JSONL")->required()->check(CLI::ExistingFile);
    extract_log->add_option("--meta", xl.meta, "run metadata JSON")->required()->check(CLI::ExistingFile);
    auto* wl_opt = extract_log->add_option("--whitelist", xl.whitelist, "whitelist JSON")->check(CLI::ExistingFile);
    extract_log->add_option("--benign", xl.benign, "benign capture JSONL (builds the whitelist)")
        ->check(CLI::ExistingFile)
        ->excludes(wl_opt);
    extract_log->add_option("--out", xl.out, "output GML")->required();
    extract_log->callback([&] {
        if (xl.whitelist.empty() && xl.benign.empty()) {
            throw CLI::ValidationError("--whitelist", "one of --whitelist or --benign is required");
        }
        const Whitelist whitelist =
            xl.whitelist.empty() ? build_whitelist(read_events(xl.benign)) : read_whitelist(xl.whitelist);
        RunInput run{xl.events, xl.meta, std::nullopt, std::nullopt};
        auto g = extract_run(run, whitelist);
        write_text_file(xl.out, export_gml(g));
        std::cerr << "[extract-log] " << g.nodes.size() << " nodes, " << g.edges.size() << " edges\n";
    });

    // extract-static
    struct {
        std::string script, ast, graph, events, meta, out;
    } xs;
    auto* extract_static = app.add_subcommand("extract-static", "Supplement a log graph with script artifacts");
    auto* script_opt = extract_static->add_option("--script", xs.script, "PowerShell source")->check(CLI::ExistingFile);
    extract_static->add_option("--ast", xs.ast, "AST JSON")->check(CLI::ExistingFile)->excludes(script_opt);
    extract_static->add_option("--graph", xs.graph, "log technique graph (GML)")->required()->check(CLI::ExistingFile);
    extract_static->add_option("--events", xs.events, "event JSONL of the run")->required()->check(CLI::ExistingFile);
    extract_static->add_option("--meta", xs.meta, "run metadata JSON")->required()->check(CLI::ExistingFile);
    extract_static->add_option("--out", xs.out, "output GML")->required();
    extract_static->callback([&] {
        if (xs.script.empty() && xs.ast.empty()) {
            throw CLI::ValidationError("--script", "one of --script or --ast is required");
        }
        RunInput run{xs.events, xs.meta, std::nullopt, std::nullopt};
        if (!xs.script.empty()) {
            run.script = xs.script;
        } else {
            run.ast = xs.ast;
        }
        const auto candidates = static_candidates(run);
        const auto meta = read_run_meta(xs.meta);
        const auto events = read_events(xs.events);
        const ExtractConfig cfg;
        const auto span = window(events, meta.t_start - cfg.window_slack_ns, meta.t_end + cfg.window_slack_ns);
        const auto chain = build_process_chain(span, meta.initial_pid, cfg);
        const auto base = read_gml_file(xs.graph);
        const auto id = fs::path(xs.script.empty() ? xs.ast : xs.script).stem().string();
        auto g = supplement_graph(base, candidates, span, chain, id);
        write_text_file(xs.out, export_gml(g));
        std::cerr << "[extract-static] " << candidates.size() << " candidates, " << g.nodes.size() - base.nodes.size()
                  << " nodes added\n";
    });

    // parse-cti
    struct {
        std::vector<std::string> reports;
        std::string client, out_dir;
    } pc;
    auto* parse_cti = app.add_subcommand("parse-cti", "Extract CTI graphs from report JSON files");
    parse_cti->add_option("--report", pc.reports, "report JSON")->required()->check(CLI::ExistingFile);
    parse_cti->add_option("--client", pc.client, "client config JSON")->required()->check(CLI::ExistingFile);
    parse_cti->add_option("--out-dir", pc.out_dir, "output directory")->required();
    parse_cti->callback([&] {
        auto doc = read_json(pc.client);
        if (doc.contains("fixture_store")) {
            doc["fixture_store"] = (fs::path(pc.client).parent_path() / doc["fixture_store"].get<std::string>()).string();
        }
        auto client = make_client(client_config_from_json(doc));
        for (const auto& path : pc.reports) {
            const auto report = report_from_json_text(read_text_file(path));
            try {
                const auto extraction = parse_report(report, *client);
                const auto g = extraction_to_graph(extraction, report.technique_id, report.report_id);
                write_json(fs::path(pc.out_dir) / (report.report_id + ".json"), extraction_to_json(extraction));
                write_text_file(fs::path(pc.out_dir) / (report.report_id + ".gml"), export_gml(g));
                std::cerr << "[parse-cti] " << report.report_id << ": " << g.nodes.size() << " nodes\n";
            } catch (const ModelUnavailable&) {
                throw;
            } catch (const Error& e) {
                std::cerr << "[parse-cti] " << report.report_id << ": error: " << e.what() << '\n';
                status = 1;
            }
        }
    });

    // merge-source
    struct {
        std::vector<std::string> in;
        std::string config, out, report;
    } ms;
    auto* merge_source = app.add_subcommand("merge-source", "Merge graphs of one source family");
    merge_source->add_option("--in", ms.in, "input GML files")->required()->check(CLI::ExistingFile);
    merge_source->add_option("--config", ms.config, "MergeConfig JSON")->check(CLI::ExistingFile);
    merge_source->add_option("--out", ms.out, "output GML")->required();
    merge_source->add_option("--report", ms.report, "MergeReport JSON");
    merge_source->callback([&] {
        auto [g, report] = merge_same_source(read_graphs(ms.in), merge_config_at(ms.config));
        write_text_file(ms.out, export_gml(g));
        if (!ms.report.empty()) {
            write_json(ms.report, merge_report_to_json(report));
        }
        std::cerr << "[merge-source] " << report.nodes_before << " -> " << report.nodes_after << " nodes\n";
    });

    // merge-cross
    struct {
        std::string base, additional, config, out, report;
    } mx;
    auto* merge_cross = app.add_subcommand("merge-cross", "Merge a CTI graph into a log graph");
    merge_cross->add_option("--base", mx.base, "log-family GML")->required()->check(CLI::ExistingFile);
    merge_cross->add_option("--additional", mx.additional, "CTI-family GML")->required()->check(CLI::ExistingFile);
    merge_cross->add_option("--config", mx.config, "MergeConfig JSON")->check(CLI::ExistingFile);
    merge_cross->add_option("--out", mx.out, "output GML")->required();
    merge_cross->add_option("--report", mx.report, "MergeReport JSON");
    merge_cross->callback([&] {
        auto [g, report] =
            merge_cross_source(read_gml_file(mx.base), read_gml_file(mx.additional), merge_config_at(mx.config));
        write_text_file(mx.out, export_gml(g));
        if (!mx.report.empty()) {
            write_json(mx.report, merge_report_to_json(report));
        }
    });

    // detect
    struct {
        std::string prov, events, kb, out;
        double threshold = kDefaultDetectionThreshold;
    } dt;
    auto* detect = app.add_subcommand("detect", "Align knowledge-base techniques against a provenance graph");
    auto* prov_opt = detect->add_option("--prov", dt.prov, "provenance GML")->check(CLI::ExistingFile);
    detect->add_option("--events", dt.events, "event JSONL (builds the provenance graph)")
        ->check(CLI::ExistingFile)
        ->excludes(prov_opt);
    detect->add_option("--kb", dt.kb, "directory of technique GML files")->required()->check(CLI::ExistingDirectory);
    detect->add_option("--threshold", dt.threshold, "minimum alignment score")->check(CLI::Range(0.0, 1.0));
    detect->add_option("--out", dt.out, "output JSON")->required();
    detect->callback([&] {
        if (dt.prov.empty() && dt.events.empty()) {
            throw CLI::ValidationError("--prov", "one of --prov or --events is required");
        }
        const auto prov =
            dt.prov.empty() ? build_provenance_graph(read_events(dt.events), "T0000") : read_gml_file(dt.prov);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dt.kb)) {
            if (entry.path().extension() == ".gml") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::vector<TechniqueGraph> kb;
        for (const auto& f : files) {
            kb.push_back(read_gml_file(f));
        }
        auto detections = detect_techniques(prov, kb, dt.threshold);
        nlohmann::json doc;
        doc["detections"] = nlohmann::json::array();
        for (const auto& d : detections) {
            doc["detections"].push_back(alignment_to_json(d));
        }
        doc["chain"] = attack_chain_to_json(build_attack_chain(detections, prov), prov);
        write_json(dt.out, doc);
        std::cerr << "[detect] " << detections.size() << " of " << kb.size() << " techniques detected\n";
    });

    // eval
    struct {
        std::string generated, truth, out;
        bool exact = false;
    } ev;
    auto* eval = app.add_subcommand("eval", "Precision and recall of a graph against ground truth");
    eval->add_option("--generated", ev.generated, "generated GML")->required()->check(CLI::ExistingFile);
    eval->add_option("--truth", ev.truth, "ground-truth GML")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", ev.out, "output JSON")->required();
    eval->add_flag("--exact", ev.exact, "exact label matching (no wildcard patterns)");
    eval->callback([&] {
        auto r = compare_graphs(read_gml_file(ev.generated), read_gml_file(ev.truth),
                                ev.exact ? LabelMatch::Exact : LabelMatch::Pattern);
        write_json(ev.out, eval_report_to_json(r));
    });

    // eval-retention
    struct {
        std::vector<std::string> reports;
        std::string out, csv;
    } er;
    auto* eval_retention = app.add_subcommand("eval-retention", "Retention distribution over merge reports");
    eval_retention->add_option("--reports", er.reports, "MergeReport JSON files")->required()->check(CLI::ExistingFile);
    eval_retention->add_option("--out", er.out, "output JSON")->required();
    eval_retention->add_option("--csv", er.csv, "per-technique CSV");
    eval_retention->callback([&] {
        std::vector<MergeReport> reports;
        for (const auto& p : er.reports) {
            reports.push_back(merge_report_from_json(read_json(p)));
        }
        const auto summary = retention_stats(reports);
        write_json(er.out, retention_summary_to_json(summary));
        if (!er.csv.empty()) {
            write_text_file(er.csv, retention_csv(summary));
        }
    });

    // gen-fixtures
    struct {
        std::string tmpl, noise, out_dir;
        std::uint64_t seed = 0;
        bool leak = false;
    } gf;
    auto* gen = app.add_subcommand("gen-fixtures", "Synthetic labeled run from a technique template");
    gen->add_option("--template", gf.tmpl, "technique template JSON")->required()->check(CLI::ExistingFile);
    gen->add_option("--noise", gf.noise, "noise profile JSON")->check(CLI::ExistingFile);
    gen->add_option("--seed", gf.seed, "generator seed")->required();
    gen->add_option("--out-dir", gf.out_dir, "output directory")->required();
    gen->add_flag("--whitelist-leak", gf.leak, "let the benign capture contain one attack object");
    gen->callback([&] {
        const auto tmpl = read_template(gf.tmpl);
        const auto noise = gf.noise.empty() ? NoiseProfile{} : noise_profile_from_json(read_json(gf.noise));
        RunOptions options;
        options.whitelist_leak = gf.leak;
        const auto run = generate_run(tmpl, noise, gf.seed, options);
        const fs::path dir = gf.out_dir;
        write_run(run, dir);
        // a ready-to-use pipeline config next to the fixtures
        nlohmann::ordered_json cfg;
        cfg["schema_version"] = kPipelineSchemaVersion;
        cfg["output_dir"] = "out";
        cfg["whitelist"] = "whitelist.json";
        nlohmann::ordered_json r{{"events", "events.jsonl"}, {"meta", "meta.json"}};
        if (run.script) {
            r["script"] = "script.ps1";
        }
        cfg["runs"] = nlohmann::ordered_json::array({r});
        if (run.report) {
            cfg["reports_dir"] = "reports";
        }
        cfg["client"] = {{"mode", "fixture"}, {"fixture_store", "store"}};
        write_text_file(dir / "pipeline.json", cfg.dump(2) + "\n");
        std::cerr << "[gen-fixtures] " << run.events.size() << " events (" << run.injected_event_count
                  << " injected) in " << dir.string() << '\n';
    });

    // pipeline
    struct {
        std::string config;
        std::size_t workers = 0;
    } pl;
    auto* pipeline = app.add_subcommand("pipeline", "End-to-end run over a pipeline config");
    pipeline->add_option("--config", pl.config, "pipeline config JSON")->required()->check(CLI::ExistingFile);
    pipeline->add_option("--workers", pl.workers, "worker threads (default: processors)");
    pipeline->callback([&] {
        auto cfg = read_pipeline_config(pl.config);
        if (pl.workers) {
            cfg.workers = pl.workers;
        }
        const auto manifest = run_pipeline(cfg);
        std::cerr << "[pipeline] " << manifest.artifacts.size() << " artifacts, " << manifest.errors.size()
                  << " errors\n";
        if (!manifest.ok()) {
            status = 1;
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return status;
}
