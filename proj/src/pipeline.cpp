#include "tkg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "tkg/cti.hpp"
#include "tkg/events.hpp"
#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

namespace tkg {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::mutex log_mutex;

void log_line(std::string_view stage, std::string_view technique, std::string_view message) {
    std::lock_guard lock(log_mutex);
    std::cerr << '[' << stage << "] ";
    if (!technique.empty()) {
        std::cerr << technique << ": ";
    }
    std::cerr << message << '\n';
}

// keeps file names portable; technique ids contain dots only
std::string safe_name(std::string_view s) {
    std::string out;
    for (char c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        out += ok ? c : '_';
    }
    return out.empty() ? "_" : out;
}

struct TechniqueResult {
    std::vector<std::pair<fs::path, std::string>> files;  // relative path, content
    std::vector<StageError> errors;
    std::vector<std::string> warnings;
};

struct TechniqueJob {
    std::string technique_id;
    std::vector<std::pair<RunInput, RunMeta>> runs;
    std::vector<ReportDoc> reports;
};

std::string report_json(const MergeReport& r) { return merge_report_to_json(r).dump(2) + "\n"; }

TechniqueResult run_technique(const TechniqueJob& job, const PipelineConfig& cfg, const Whitelist& whitelist,
                              ModelClient* client) {
    TechniqueResult out;
    const std::string& tech = job.technique_id;
    const fs::path dir = safe_name(tech);
    auto fail = [&](std::string stage, std::string message, bool fatal) {
        log_line(stage, tech, (fatal ? "error: " : "warning: ") + message);
        out.errors.push_back({std::move(stage), tech, std::move(message), fatal});
    };

    std::vector<TechniqueGraph> log_graphs;
    std::map<std::string, int> name_uses;  // repeated procedure ids get -2, -3, ...
    for (const auto& [run, meta] : job.runs) {
        try {
            auto g = extract_run(run, whitelist, cfg.extract);
            log_line("extract-log", tech,
                     meta.procedure_id + ": " + std::to_string(g.nodes.size()) + " nodes, " +
                         std::to_string(g.edges.size()) + " edges");
            std::string name = safe_name(meta.procedure_id);
            if (int n = ++name_uses[name]; n > 1) {
                name += "-" + std::to_string(n);
            }
            out.files.emplace_back(dir / "log" / (name + ".gml"), export_gml(g));
            log_graphs.push_back(std::move(g));
        } catch (const std::exception& e) {
            fail("extract-log", meta.procedure_id + ": " + e.what(), true);
        }
    }
    if (log_graphs.empty()) {
        return out;
    }

    TechniqueGraph merged_log;
    try {
        auto [g, report] = merge_same_source(log_graphs, cfg.merge);
        out.files.emplace_back(dir / "merged-log.gml", export_gml(g));
        out.files.emplace_back(dir / "merge-log-report.json", report_json(report));
        merged_log = std::move(g);
    } catch (const std::exception& e) {
        fail("merge-source", std::string("log graphs: ") + e.what(), true);
        return out;
    }

    std::vector<TechniqueGraph> cti_graphs;
    for (const auto& doc : job.reports) {
        try {
            auto extraction = parse_report(doc, *client);
            auto g = extraction_to_graph(extraction, tech, doc.report_id);
            out.files.emplace_back(dir / "cti" / (safe_name(doc.report_id) + ".json"),
                                   extraction_to_json(extraction).dump(2) + "\n");
            out.files.emplace_back(dir / "cti" / (safe_name(doc.report_id) + ".gml"), export_gml(g));
            cti_graphs.push_back(std::move(g));
        } catch (const ModelUnavailable& e) {
            fail("parse-cti", doc.report_id + ": " + e.what(), true);
        } catch (const std::exception& e) {
            // one unusable report does not invalidate the technique
            fail("parse-cti", doc.report_id + ": " + e.what(), false);
        }
    }

    TechniqueGraph unified;
    if (cti_graphs.empty()) {
        std::string why = job.reports.empty() ? "no reports" : "no usable reports";
        out.warnings.push_back(tech + ": " + why + "; merged log graph promoted to unified");
        log_line("merge-cross", tech, "warning: " + why + ", promoting the merged log graph");
        unified = merged_log;
        unified.source_kind = SourceKind::Unified;
        unified.procedure_id.reset();
    } else {
        try {
            auto [mc, cti_report] = merge_same_source(cti_graphs, cfg.merge);
            out.files.emplace_back(dir / "merged-cti.gml", export_gml(mc));
            out.files.emplace_back(dir / "merge-cti-report.json", report_json(cti_report));
            auto [u, cross_report] = merge_cross_source(merged_log, mc, cfg.merge);
            out.files.emplace_back(dir / "merge-cross-report.json", report_json(cross_report));
            unified = std::move(u);
        } catch (const std::exception& e) {
            fail("merge-cross", e.what(), true);
            return out;
        }
    }
    out.files.emplace_back(dir / "unified.gml", export_gml(unified));
    log_line("merge-cross", tech,
             "unified graph: " + std::to_string(unified.nodes.size()) + " nodes, " +
                 std::to_string(unified.edges.size()) + " edges");
    return out;
}

std::string portable(const fs::path& p) { return p.generic_string(); }

}  // namespace

// ---- config ---------------------------------------------------------------

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
    PipelineConfig cfg;
    try {
        if (!doc.is_object()) {
            throw ConfigError("pipeline config must be a JSON object");
        }
        cfg.schema_version = doc.value("schema_version", 0);
        if (cfg.schema_version != kPipelineSchemaVersion) {
            throw ConfigError("unsupported pipeline config schema_version " + std::to_string(cfg.schema_version) +
                              " (expected " + std::to_string(kPipelineSchemaVersion) + ")");
        }
        if (!doc.contains("whitelist")) {
            throw ConfigError("pipeline config has no whitelist");
        }
        cfg.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out")));
        cfg.whitelist = resolve(base_dir, doc.at("whitelist").get<std::string>());
        for (const auto& r : doc.at("runs")) {
            RunInput run;
            run.events = resolve(base_dir, r.at("events").get<std::string>());
            run.meta = resolve(base_dir, r.at("meta").get<std::string>());
            if (r.contains("script")) {
                run.script = resolve(base_dir, r["script"].get<std::string>());
            }
            if (r.contains("ast")) {
                run.ast = resolve(base_dir, r["ast"].get<std::string>());
            }
            cfg.runs.push_back(std::move(run));
        }
        if (doc.contains("reports_dir")) {
            cfg.reports_dir = resolve(base_dir, doc["reports_dir"].get<std::string>());
        }
        if (doc.contains("merge")) {
            cfg.merge = merge_config_from_json(doc["merge"]);
        }
        if (doc.contains("extract")) {
            const auto& e = doc["extract"];
            cfg.extract.window_slack_ns = e.value("window_slack_ms", cfg.extract.window_slack_ns / 1'000'000) * 1'000'000;
            cfg.extract.collapse_min = e.value("collapse_min", cfg.extract.collapse_min);
            if (e.contains("common_processes")) {
                cfg.extract.common_processes = e["common_processes"].get<std::vector<std::string>>();
            }
        }
        cfg.detection_threshold = doc.value("detection_threshold", cfg.detection_threshold);
        if (doc.contains("client")) {
            nlohmann::json client = doc["client"];
            if (client.contains("fixture_store")) {
                client["fixture_store"] = resolve(base_dir, client["fixture_store"].get<std::string>()).string();
            }
            cfg.client = client_config_from_json(client);
        }
        cfg.workers = doc.value("workers", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return cfg;
}

PipelineConfig read_pipeline_config(const fs::path& path) {
    auto doc = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (doc.is_discarded()) {
        throw ConfigError(path.string() + ": not valid JSON");
    }
    return pipeline_config_from_json(doc, path.parent_path());
}

void validate_pipeline_config(const PipelineConfig& cfg) {
    if (cfg.schema_version != kPipelineSchemaVersion) {
        throw ConfigError("unsupported pipeline config schema_version");
    }
    if (cfg.whitelist.empty()) {
        throw ConfigError("pipeline config has no whitelist");
    }
    if (!fs::is_regular_file(cfg.whitelist)) {
        throw ConfigError("whitelist not found: " + cfg.whitelist.string());
    }
    if (cfg.output_dir.empty()) {
        throw ConfigError("pipeline config has no output_dir");
    }
    if (cfg.runs.empty()) {
        throw ConfigError("pipeline config lists no runs");
    }
    for (const auto& run : cfg.runs) {
        for (const auto& p : {std::optional(run.events), std::optional(run.meta), run.script, run.ast}) {
            if (p && !fs::is_regular_file(*p)) {
                throw ConfigError("run input not found: " + p->string());
            }
        }
        if (run.script && run.ast) {
            throw ConfigError("a run takes either script or ast, not both");
        }
    }
    if (cfg.reports_dir && !fs::is_directory(*cfg.reports_dir)) {
        throw ConfigError("reports_dir not found: " + cfg.reports_dir->string());
    }
    if (cfg.detection_threshold < 0 || cfg.detection_threshold > 1) {
        throw ConfigError("detection_threshold must lie in [0, 1]");
    }
    validate_merge_config(cfg.merge);
    validate_client_config(cfg.client);
}

// ---- stages ---------------------------------------------------------------

std::vector<Candidate> static_candidates(const RunInput& run) {
    if (run.script) {
        return classify_candidates(collect_static_nodes(parse_script(read_text_file(*run.script))));
    }
    if (run.ast) {
        return classify_candidates(collect_static_nodes(load_ast_text(read_text_file(*run.ast))));
    }
    return {};
}

TechniqueGraph extract_run(const RunInput& run, const Whitelist& whitelist, const ExtractConfig& cfg) {
    const auto meta = read_run_meta(run.meta);
    const auto events = read_events(run.events);
    auto graph = extract_technique_graph(events, meta, whitelist, cfg);
    if (run.script || run.ast) {
        const auto candidates = static_candidates(run);
        const auto span = window(events, meta.t_start - cfg.window_slack_ns, meta.t_end + cfg.window_slack_ns);
        const auto chain = build_process_chain(span, meta.initial_pid, cfg);
        const auto id = (run.script ? *run.script : *run.ast).stem().string();
        graph = supplement_graph(graph, candidates, span, chain, id);
    }
    return graph;
}

// ---- manifest -------------------------------------------------------------

bool Manifest::ok() const {
    return std::none_of(errors.begin(), errors.end(), [](const StageError& e) { return e.fatal; });
}

nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::ordered_json doc;
    doc["schema_version"] = m.schema_version;
    doc["ok"] = m.ok();
    doc["techniques"] = m.techniques;
    doc["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& a : m.artifacts) {
        doc["artifacts"].push_back({{"path", a.path}, {"sha256", a.sha256}});
    }
    doc["errors"] = nlohmann::ordered_json::array();
    for (const auto& e : m.errors) {
        doc["errors"].push_back(
            {{"stage", e.stage}, {"technique", e.technique}, {"message", e.message}, {"fatal", e.fatal}});
    }
    doc["warnings"] = m.warnings;
    return nlohmann::json::parse(doc.dump());
}

Manifest run_pipeline(const PipelineConfig& cfg, std::shared_ptr<Transport> transport) {
    validate_pipeline_config(cfg);
    Manifest manifest;
    const Whitelist whitelist = read_whitelist(cfg.whitelist);

    std::map<std::string, TechniqueJob> jobs;
    for (const auto& run : cfg.runs) {
        try {
            auto meta = read_run_meta(run.meta);
            auto& job = jobs[meta.technique_id];
            job.technique_id = meta.technique_id;
            job.runs.emplace_back(run, std::move(meta));
        } catch (const std::exception& e) {
            manifest.errors.push_back({"extract-log", "", run.meta.string() + ": " + e.what(), true});
            log_line("extract-log", "", std::string("error: ") + e.what());
        }
    }
    if (cfg.reports_dir) {
        try {
            for (auto& doc : load_reports(*cfg.reports_dir)) {
                auto it = jobs.find(doc.technique_id);
                if (it == jobs.end()) {
                    manifest.warnings.push_back(doc.report_id + ": no log run for technique " + doc.technique_id +
                                                "; report skipped");
                    continue;
                }
                it->second.reports.push_back(std::move(doc));
            }
        } catch (const std::exception& e) {
            manifest.errors.push_back({"parse-cti", "", e.what(), true});
            log_line("parse-cti", "", std::string("error: ") + e.what());
        }
    }

    std::unique_ptr<ModelClient> client = make_client(cfg.client, std::move(transport));

    std::vector<const TechniqueJob*> order;
    for (const auto& [id, job] : jobs) {
        order.push_back(&job);
        manifest.techniques.push_back(id);
    }
    std::vector<TechniqueResult> results(order.size());
    std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(order.size(), 1));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < order.size();) {
            try {
                results[i] = run_technique(*order[i], cfg, whitelist, client.get());
            } catch (const std::exception& e) {
                results[i].errors.push_back({"pipeline", order[i]->technique_id, e.what(), true});
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back(work);
    }
    work();
    for (auto& t : pool) {
        t.join();
    }

    for (auto& r : results) {
        for (const auto& [rel, content] : r.files) {
            write_text_file(cfg.output_dir / rel, content);
            manifest.artifacts.push_back({portable(rel), sha256_hex(content)});
        }
        manifest.errors.insert(manifest.errors.end(), r.errors.begin(), r.errors.end());
        manifest.warnings.insert(manifest.warnings.end(), r.warnings.begin(), r.warnings.end());
    }
    std::sort(manifest.artifacts.begin(), manifest.artifacts.end(),
              [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
    write_text_file(cfg.output_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    return manifest;
}

}  // namespace tkg
