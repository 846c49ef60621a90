#include "tkg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "tkg/log_extract.hpp"
#include "tkg/model_client.hpp"
#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

namespace tkg {

std::uint64_t SplitMix64::next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t SplitMix64::below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

double SplitMix64::unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

namespace {

struct EventShape {
    EventType type;
    std::string_view name;
    NodeKind target;
};

EventShape shape_of(Relation r) {
    switch (r) {
        case Relation::ProcessStart: return {EventType::Process, "Start", NodeKind::Process};
        case Relation::ProcessDCStart: return {EventType::Process, "DCStart", NodeKind::Process};
        case Relation::ThreadStart: return {EventType::Thread, "Start", NodeKind::Thread};
        case Relation::ThreadDCStart: return {EventType::Thread, "DCStart", NodeKind::Thread};
        case Relation::FileCreate: return {EventType::File, "Create", NodeKind::File};
        case Relation::FileRead: return {EventType::File, "Read", NodeKind::File};
        case Relation::FileWrite: return {EventType::File, "Write", NodeKind::File};
        case Relation::FileRename: return {EventType::File, "Rename", NodeKind::File};
        case Relation::RegistryQuery: return {EventType::Registry, "Query", NodeKind::Registry};
        case Relation::RegistryCreate: return {EventType::Registry, "Create", NodeKind::Registry};
        case Relation::RegistrySetValue: return {EventType::Registry, "SetValue", NodeKind::Registry};
        case Relation::NetReceive: return {EventType::Internet, "Receive", NodeKind::Network};
        case Relation::NetSend: return {EventType::Internet, "Send", NodeKind::Network};
        case Relation::ImageLoad: return {EventType::Image, "Load", NodeKind::Image};
        case Relation::ImageDCStart: return {EventType::Image, "DCStart", NodeKind::Image};
    }
    return {EventType::Process, "Start", NodeKind::Process};
}

bool acts(NodeKind kind) { return kind == NodeKind::Process || kind == NodeKind::Thread; }

constexpr std::string_view kUsers[] = {"alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"};

constexpr std::string_view kBenignImages[] = {
    R"(C:\Windows\System32\svchost.exe)",         R"(C:\Windows\explorer.exe)",
    R"(C:\Windows\System32\RuntimeBroker.exe)",   R"(C:\Windows\System32\SearchIndexer.exe)",
    R"(C:\Windows\System32\spoolsv.exe)",         R"(C:\Windows\System32\services.exe)",
    R"(C:\Windows\System32\winlogon.exe)",        R"(C:\Windows\System32\dwm.exe)",
    R"(C:\Windows\System32\taskhostw.exe)",       R"(C:\Windows\System32\sihost.exe)",
    R"(C:\Windows\System32\ctfmon.exe)",          R"(C:\Program Files\Vendor\Updater\updater.exe)",
    R"(C:\Program Files\Mozilla Firefox\firefox.exe)", R"(C:\Program Files\Microsoft Office\root\Office16\OUTLOOK.EXE)",
    R"(C:\Windows\System32\notepad.exe)",         R"(C:\Windows\System32\cmd.exe)",
    R"(C:\Windows\System32\WindowsPowerShell\v1.0\powershell.exe)", R"(C:\Windows\System32\conhost.exe)",
    R"(C:\Windows\System32\lsass.exe)",           R"(C:\Windows\System32\wininit.exe)",
    R"(C:\Windows\System32\audiodg.exe)",         R"(C:\Windows\System32\fontdrvhost.exe)",
    R"(C:\Program Files\Windows Defender\MsMpEng.exe)", R"(C:\Windows\System32\WmiPrvSE.exe)",
};

std::string hex8(SplitMix64& rng) {
    std::ostringstream out;
    out << std::hex << std::setw(8) << std::setfill('0') << (rng.next() & 0xffffffffULL);
    return out.str();
}

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
    return text;
}

// Deterministic benign vocabularies; attack templates never use these roots.
std::vector<std::string> benign_vocabulary(EventType type, std::size_t n) {
    static constexpr std::string_view kExt[] = {"dat", "log", "ini", "db"};
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::ostringstream s;
        switch (type) {
            case EventType::File:
                s << R"(C:\ProgramData\Vendor)" << (i % 7) << R"(\cache\item)" << i << '.' << kExt[i % 4];
                break;
            case EventType::Registry:
                s << R"(HKLM\SOFTWARE\Vendor)" << (i % 7) << R"(\Settings\Value)" << i;
                break;
            case EventType::Internet:
                s << "10." << (20 + i / 250) << '.' << (i % 250) << '.' << (1 + i % 13) << ":443";
                break;
            case EventType::Image:
                s << R"(C:\Windows\System32\vendorlib)" << i << ".dll";
                break;
            default:
                break;
        }
        out.push_back(s.str());
    }
    return out;
}

struct Instance {
    std::map<std::string, std::string> labels;  // node name -> instantiated label
    std::map<std::string, std::int64_t> pids;
};

Instance instantiate(const TechniqueTemplate& tmpl, SplitMix64& rng) {
    Instance inst;
    const std::string user(kUsers[rng.below(std::size(kUsers))]);
    std::set<std::int64_t> used;
    for (const auto& n : tmpl.nodes) {
        std::string label = replace_all(n.label, "{user}", user);
        std::size_t pos;
        while ((pos = label.find("{rand8}")) != std::string::npos) {
            label.replace(pos, 7, hex8(rng));
        }
        inst.labels[n.name] = label;
        if (acts(n.kind)) {
            std::int64_t pid;
            do {
                pid = 10'000 + static_cast<std::int64_t>(rng.below(50'000)) * 4;
            } while (!used.insert(pid).second);
            inst.pids[n.name] = pid;
        }
    }
    return inst;
}

std::string substitute_nodes(std::string text, const Instance& inst) {
    for (const auto& [name, label] : inst.labels) {
        text = replace_all(std::move(text), "{node:" + name + "}", label);
    }
    return text;
}

// labels carry backslashes, so substitute inside string values, not the dump
nlohmann::json substitute_json(const nlohmann::json& doc, const Instance& inst) {
    if (doc.is_string()) {
        return substitute_nodes(doc.get<std::string>(), inst);
    }
    if (doc.is_array() || doc.is_object()) {
        nlohmann::json out = doc;
        for (auto it = out.begin(); it != out.end(); ++it) {
            *it = substitute_json(*it, inst);
        }
        return out;
    }
    return doc;
}

TechniqueGraph truth_graph(const TechniqueTemplate& tmpl, const Instance& inst) {
    TechniqueGraph g;
    g.technique_id = tmpl.technique_id;
    g.procedure_id = tmpl.procedure_id;
    g.source_kind = SourceKind::Log;
    const std::set<std::string> tag{"log:" + tmpl.procedure_id};
    KnowledgeNode attacker;
    attacker.kind = NodeKind::Attacker;
    attacker.label = std::string(kAttackerLabel);
    attacker.provenance = tag;
    g.nodes.push_back(attacker);
    std::map<std::string, NodeId> ids;
    for (const auto& n : tmpl.nodes) {
        KnowledgeNode k;
        k.id = g.nodes.size();
        k.kind = n.kind;
        k.label = inst.labels.at(n.name);
        k.provenance = tag;
        ids[n.name] = k.id;
        g.nodes.push_back(std::move(k));
    }
    g.add_edge(0, ids.at(tmpl.initial), {Relation::ProcessStart}, {}, tag);
    for (const auto& e : tmpl.edges) {
        g.add_edge(ids.at(e.src), ids.at(e.dst), {e.relation}, {}, tag);
    }
    return g;
}

const std::vector<std::pair<EventType, std::string_view>>& dropped_names() {
    static const std::vector<std::pair<EventType, std::string_view>> kDropped = {
        {EventType::Process, "End"},       {EventType::Thread, "End"},     {EventType::File, "FileioCreate"},
        {EventType::Registry, "Open"},     {EventType::Registry, "Close"}, {EventType::File, "Close"},
        {EventType::Process, "DCEnd"},     {EventType::Image, "Unload"},
    };
    return kDropped;
}

std::string_view kept_name(EventType type, SplitMix64& rng) {
    switch (type) {
        case EventType::File: {
            static constexpr std::string_view k[] = {"Read", "Read", "Write", "Create", "Rename"};
            return k[rng.below(std::size(k))];
        }
        case EventType::Registry: {
            static constexpr std::string_view k[] = {"Query", "Query", "Query", "SetValue", "Create"};
            return k[rng.below(std::size(k))];
        }
        case EventType::Internet:
            return rng.below(2) ? "Send" : "Receive";
        case EventType::Image:
            return "Load";
        default:
            return "Start";
    }
}

}  // namespace

// ---- template / profile JSON ---------------------------------------------

TechniqueTemplate template_from_json(const nlohmann::json& doc) {
    TechniqueTemplate t;
    try {
        t.technique_id = doc.at("technique_id").get<std::string>();
        t.procedure_id = doc.at("procedure_id").get<std::string>();
        t.initial = doc.at("initial").get<std::string>();
        for (const auto& n : doc.at("nodes")) {
            auto kind = node_kind_from_string(n.at("kind").get<std::string>());
            if (!kind || *kind == NodeKind::Attacker) {
                throw SchemaError("template node '" + n.at("name").get<std::string>() + "' has an invalid kind");
            }
            t.nodes.push_back({n.at("name").get<std::string>(), *kind, n.at("label").get<std::string>()});
        }
        for (const auto& e : doc.at("edges")) {
            auto rel = relation_from_string(e.at("relation").get<std::string>());
            if (!rel) {
                throw SchemaError("template edge has unknown relation '" + e.at("relation").get<std::string>() + "'");
            }
            t.edges.push_back({e.at("src").get<std::string>(), e.at("dst").get<std::string>(), *rel,
                               e.value("offset_ms", std::int64_t{0})});
        }
        if (doc.contains("script")) {
            t.script = doc["script"].get<std::string>();
        }
        if (doc.contains("report")) {
            const auto& r = doc["report"];
            t.report = ReportFixture{r.at("report_id").get<std::string>(), r.value("source_name", std::string("synthetic")),
                                     r.at("text").get<std::string>(), r.at("answer")};
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("template: ") + e.what());
    }
    if (!is_technique_id(t.technique_id)) {
        throw SchemaError("template: malformed technique_id '" + t.technique_id + "'");
    }
    std::map<std::string, NodeKind> kinds;
    for (const auto& n : t.nodes) {
        if (!kinds.emplace(n.name, n.kind).second) {
            throw SchemaError("template: duplicate node name '" + n.name + "'");
        }
        if (n.label.empty()) {
            throw SchemaError("template: node '" + n.name + "' has an empty label");
        }
    }
    auto initial = kinds.find(t.initial);
    if (initial == kinds.end() || initial->second != NodeKind::Process) {
        throw SchemaError("template: initial node must name a Process");
    }
    for (const auto& e : t.edges) {
        auto s = kinds.find(e.src);
        auto d = kinds.find(e.dst);
        if (s == kinds.end() || d == kinds.end()) {
            throw SchemaError("template: edge " + e.src + "->" + e.dst + " references an unknown node");
        }
        if (!acts(s->second)) {
            throw SchemaError("template: edge source '" + e.src + "' is not a process or thread");
        }
        if (shape_of(e.relation).target != d->second) {
            throw SchemaError("template: relation " + std::string(to_string(e.relation)) + " cannot target a " +
                              std::string(to_string(d->second)));
        }
        if (e.offset_ms < 0) {
            throw SchemaError("template: negative offset");
        }
    }
    return t;
}

TechniqueTemplate read_template(const std::filesystem::path& path) {
    auto doc = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (doc.is_discarded()) {
        throw SchemaError(path.string() + ": not JSON");
    }
    try {
        return template_from_json(doc);
    } catch (const SchemaError& e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
}

NoiseProfile noise_profile_from_json(const nlohmann::json& doc) {
    NoiseProfile p;
    try {
        p.events_per_second = doc.value("events_per_second", p.events_per_second);
        p.event_count = doc.value("event_count", p.event_count);
        p.chain_noise_fraction = doc.value("chain_noise_fraction", p.chain_noise_fraction);
        p.dropped_name_fraction = doc.value("dropped_name_fraction", p.dropped_name_fraction);
        p.benign_processes = doc.value("benign_processes", p.benign_processes);
        p.vocabulary_per_type = doc.value("vocabulary_per_type", p.vocabulary_per_type);
        if (doc.contains("mix")) {
            p.mix.clear();
            for (const auto& [key, value] : doc["mix"].items()) {
                auto type = event_type_from_string(key);
                if (!type) {
                    throw SchemaError("noise profile: unknown event type '" + key + "'");
                }
                p.mix[*type] = value.get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("noise profile: ") + e.what());
    }
    double total = 0;
    for (const auto& [type, share] : p.mix) {
        if (share < 0) {
            throw SchemaError("noise profile: negative mix ratio");
        }
        total += share;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw SchemaError("noise profile: mix ratios sum to " + std::to_string(total) + ", expected 1");
    }
    if (p.events_per_second <= 0 || p.benign_processes == 0 || p.benign_processes > std::size(kBenignImages) * 8 ||
        p.vocabulary_per_type == 0) {
        throw SchemaError("noise profile: rate, benign_processes and vocabulary_per_type must be positive");
    }
    if (p.chain_noise_fraction < 0 || p.chain_noise_fraction > 1 || p.dropped_name_fraction < 0 ||
        p.dropped_name_fraction > 1) {
        throw SchemaError("noise profile: fractions must lie in [0, 1]");
    }
    return p;
}

nlohmann::json noise_profile_to_json(const NoiseProfile& p) {
    nlohmann::json doc;
    doc["events_per_second"] = p.events_per_second;
    doc["event_count"] = p.event_count;
    doc["chain_noise_fraction"] = p.chain_noise_fraction;
    doc["dropped_name_fraction"] = p.dropped_name_fraction;
    doc["benign_processes"] = p.benign_processes;
    doc["vocabulary_per_type"] = p.vocabulary_per_type;
    for (const auto& [type, share] : p.mix) {
        doc["mix"][std::string(to_string(type))] = share;
    }
    return doc;
}

// ---- run generation -------------------------------------------------------

GeneratedRun generate_run(const TechniqueTemplate& tmpl, const NoiseProfile& noise, std::uint64_t seed,
                          const RunOptions& options) {
    SplitMix64 rng(seed);
    GeneratedRun run;
    const Instance inst = instantiate(tmpl, rng);
    run.truth = truth_graph(tmpl, inst);

    std::map<std::string, NodeKind> kinds;
    for (const auto& n : tmpl.nodes) {
        kinds[n.name] = n.kind;
    }

    const double duration_ns = static_cast<double>(noise.event_count) / noise.events_per_second * 1e9;
    std::int64_t max_offset_ms = 0;
    for (const auto& e : tmpl.edges) {
        max_offset_ms = std::max(max_offset_ms, e.offset_ms);
    }
    const std::int64_t t_start =
        options.t0 + static_cast<std::int64_t>(duration_ns * 0.4) + static_cast<std::int64_t>(rng.below(1'000'000));
    const std::int64_t t_end = t_start + max_offset_ms * 1'000'000;

    run.meta = RunMeta{tmpl.technique_id, tmpl.procedure_id, inst.pids.at(tmpl.initial), t_start, t_end};

    // injected events: one per template edge
    std::vector<AuditEvent> attack;
    for (const auto& e : tmpl.edges) {
        const auto shape = shape_of(e.relation);
        AuditEvent ev;
        ev.ts = t_start + e.offset_ms * 1'000'000;
        ev.event_type = shape.type;
        ev.event_name = std::string(shape.name);
        ev.pid = inst.pids.at(e.src);
        ev.subject_image = inst.labels.at(e.src);
        ev.object = inst.labels.at(e.dst);
        if (acts(kinds.at(e.dst))) {
            ev.object_pid = inst.pids.at(e.dst);
        }
        if (shape.type == EventType::Process) {
            ev.ppid = ev.pid;
        }
        if (shape.type == EventType::Thread) {
            ev.tid = static_cast<std::int64_t>(rng.below(100'000)) + 1;
        }
        attack.push_back(std::move(ev));
    }
    std::stable_sort(attack.begin(), attack.end(), [](const AuditEvent& a, const AuditEvent& b) { return a.ts < b.ts; });
    run.injected_event_count = attack.size();

    // benign processes and vocabularies
    std::vector<std::pair<std::int64_t, std::string>> benign_procs;
    {
        std::set<std::int64_t> used;
        for (std::size_t i = 0; i < noise.benign_processes; ++i) {
            std::int64_t pid;
            do {
                pid = 1'000 + static_cast<std::int64_t>(rng.below(2'250)) * 4;
            } while (!used.insert(pid).second);
            benign_procs.emplace_back(pid, std::string(kBenignImages[i % std::size(kBenignImages)]));
        }
    }
    std::map<EventType, std::vector<std::string>> vocab;
    for (EventType t : {EventType::File, EventType::Registry, EventType::Internet, EventType::Image}) {
        vocab[t] = benign_vocabulary(t, noise.vocabulary_per_type);
    }
    std::vector<std::string> attack_objects;
    std::vector<std::pair<std::int64_t, std::string>> chain_procs;
    for (const auto& n : tmpl.nodes) {
        if (acts(n.kind)) {
            chain_procs.emplace_back(inst.pids.at(n.name), inst.labels.at(n.name));
        } else {
            attack_objects.push_back(n.name);
        }
    }

    std::vector<std::pair<EventType, double>> cumulative;
    double acc = 0;
    for (const auto& [type, share] : noise.mix) {
        acc += share;
        cumulative.emplace_back(type, acc);
    }
    auto pick_type = [&] {
        const double u = rng.unit() * acc;
        for (const auto& [type, bound] : cumulative) {
            if (u < bound) {
                return type;
            }
        }
        return cumulative.back().first;
    };

    std::vector<AuditEvent> noise_events;
    noise_events.reserve(noise.event_count);
    for (std::size_t i = 0; i < noise.event_count; ++i) {
        AuditEvent ev;
        ev.ts = options.t0 + static_cast<std::int64_t>(rng.unit() * duration_ns);
        const bool in_window = ev.ts >= t_start && ev.ts <= t_end;
        const bool by_chain = in_window && !chain_procs.empty() && rng.unit() < noise.chain_noise_fraction;
        const bool dropped = rng.unit() < noise.dropped_name_fraction;
        const auto& actor = by_chain ? chain_procs[rng.below(chain_procs.size())]
                                     : benign_procs[rng.below(benign_procs.size())];
        ev.pid = actor.first;
        ev.subject_image = actor.second;
        if (dropped) {
            const auto& [type, name] = dropped_names()[rng.below(dropped_names().size())];
            ev.event_type = type;
            ev.event_name = std::string(name);
            // attack processes also touch attack objects through dropped names
            if (by_chain && !attack_objects.empty() && rng.below(2) == 0) {
                ev.object = inst.labels.at(attack_objects[rng.below(attack_objects.size())]);
            } else if (type == EventType::Process || type == EventType::Thread) {
                ev.object = actor.second;
                ev.object_pid = actor.first;
            } else {
                ev.object = vocab[type][rng.below(vocab[type].size())];
            }
            if (type == EventType::Thread) {
                ev.tid = static_cast<std::int64_t>(rng.below(100'000)) + 1;
            }
        } else {
            EventType type = pick_type();
            if (by_chain && (type == EventType::Process || type == EventType::Thread)) {
                type = EventType::Image;  // attack processes spawn nothing outside the template
            }
            ev.event_type = type;
            if (type == EventType::Process) {
                const auto& child = benign_procs[rng.below(benign_procs.size())];
                ev.event_name = "Start";
                ev.ppid = ev.pid;
                ev.object = child.second;
                ev.object_pid = child.first;
            } else if (type == EventType::Thread) {
                ev.event_name = "Start";
                ev.tid = static_cast<std::int64_t>(rng.below(100'000)) + 1;
                ev.object = actor.second;
                ev.object_pid = actor.first;
            } else {
                ev.event_name = std::string(kept_name(type, rng));
                ev.object = vocab[type][rng.below(vocab[type].size())];
            }
        }
        noise_events.push_back(std::move(ev));
    }
    std::stable_sort(noise_events.begin(), noise_events.end(),
                     [](const AuditEvent& a, const AuditEvent& b) { return a.ts < b.ts; });
    run.events.reserve(attack.size() + noise_events.size());
    std::merge(noise_events.begin(), noise_events.end(), attack.begin(), attack.end(), std::back_inserter(run.events),
               [](const AuditEvent& a, const AuditEvent& b) { return a.ts < b.ts; });

    // benign capture: every vocabulary object once, before the attack run
    std::int64_t ts = options.t0 - 10'000'000'000LL;
    for (EventType t : {EventType::File, EventType::Registry, EventType::Internet, EventType::Image}) {
        for (const auto& object : vocab[t]) {
            const auto& actor = benign_procs[rng.below(benign_procs.size())];
            AuditEvent ev;
            ev.ts = ts;
            ts += 1'000;
            ev.event_type = t;
            ev.event_name = std::string(kept_name(t, rng));
            ev.pid = actor.first;
            ev.subject_image = actor.second;
            ev.object = object;
            run.benign.push_back(std::move(ev));
        }
    }
    if (options.whitelist_leak) {
        for (const auto& n : tmpl.nodes) {
            if (n.kind == NodeKind::File || n.kind == NodeKind::Registry) {
                AuditEvent ev;
                ev.ts = ts;
                ts += 1'000;
                ev.event_type = n.kind == NodeKind::File ? EventType::File : EventType::Registry;
                ev.event_name = n.kind == NodeKind::File ? "Read" : "Query";
                ev.pid = benign_procs.front().first;
                ev.subject_image = benign_procs.front().second;
                ev.object = inst.labels.at(n.name);
                run.leaked_object = ev.object;
                run.benign.push_back(std::move(ev));
                break;
            }
        }
    }
    // counted from the generator's own vocabularies, independent of the whitelist code
    run.benign_object_count = 0;
    for (const auto& [type, objects] : vocab) {
        run.benign_object_count += std::set<std::string>(objects.begin(), objects.end()).size();
    }
    run.benign_object_count += run.leaked_object ? 1 : 0;

    if (tmpl.script) {
        run.script = substitute_nodes(*tmpl.script, inst);
    }
    if (tmpl.report) {
        ReportDoc doc;
        doc.report_id = tmpl.report->report_id;
        doc.technique_id = tmpl.technique_id;
        doc.source_name = tmpl.report->source_name;
        doc.text = substitute_nodes(tmpl.report->text, inst);
        run.report = doc;
        run.model_answer = substitute_json(tmpl.report->answer, inst).dump();
    }
    return run;
}

void write_run(const GeneratedRun& run, const std::filesystem::path& dir) {
    write_events(dir / "events.jsonl", run.events);
    write_run_meta(dir / "meta.json", run.meta);
    write_text_file(dir / "truth.gml", export_gml(run.truth));
    write_events(dir / "benign.jsonl", run.benign);
    write_whitelist(dir / "whitelist.json", build_whitelist(run.benign));
    if (run.script) {
        write_text_file(dir / "script.ps1", *run.script);
    }
    if (run.report && run.model_answer) {
        nlohmann::ordered_json doc;
        doc["report_id"] = run.report->report_id;
        doc["technique_id"] = run.report->technique_id;
        doc["source_name"] = run.report->source_name;
        doc["text"] = run.report->text;
        write_text_file(dir / "reports" / (run.report->report_id + ".json"), doc.dump(2) + "\n");
        fixture_store_put(dir / "store", build_prompt(*run.report), *run.model_answer);
    }
}

// ---- embedding ------------------------------------------------------------

EmbeddedRun embed_technique(const TechniqueTemplate& tmpl, std::uint64_t seed, std::size_t total_nodes) {
    SplitMix64 rng(seed);
    EmbeddedRun out;
    const Instance inst = instantiate(tmpl, rng);
    out.truth = truth_graph(tmpl, inst);

    TechniqueGraph& g = out.prov;
    g.technique_id = "T0000";
    g.procedure_id = "provenance";
    g.source_kind = SourceKind::Log;
    const std::set<std::string> tag{"log:provenance"};
    auto add = [&](NodeKind kind, std::string label) {
        KnowledgeNode n;
        n.id = g.nodes.size();
        n.kind = kind;
        n.label = std::move(label);
        n.provenance = tag;
        g.nodes.push_back(std::move(n));
        return g.nodes.back().id;
    };
    const std::int64_t t0 = 1'700'000'000'000'000'000 + static_cast<std::int64_t>(rng.below(1'000'000'000));
    auto stamp = [&] { return t0 + static_cast<std::int64_t>(rng.below(60'000'000'000ULL)); };

    const NodeId root = add(NodeKind::Process, std::string(kBenignImages[1]));  // explorer
    std::vector<NodeId> procs{root};

    // the technique, hanging off the benign root
    const std::size_t tech_nodes = tmpl.nodes.size();
    const std::int64_t attack_start = stamp();
    for (const auto& n : tmpl.nodes) {
        NodeId id = add(n.kind, inst.labels.at(n.name));
        out.injection[out.truth.nodes[out.injection.size() + 1].id] = id;
    }
    auto prov_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < tmpl.nodes.size(); ++i) {
            if (tmpl.nodes[i].name == name) {
                return out.injection.at(i + 1);
            }
        }
        throw Error("embed_technique: unknown node " + name);
    };
    g.add_edge(root, prov_of(tmpl.initial), {Relation::ProcessStart}, {attack_start}, tag);
    for (const auto& e : tmpl.edges) {
        g.add_edge(prov_of(e.src), prov_of(e.dst), {e.relation}, {attack_start + e.offset_ms * 1'000'000}, tag);
    }

    // benign filler: look-alikes of the technique's processes first, then others
    const std::size_t budget = total_nodes > tech_nodes + 1 ? total_nodes - tech_nodes - 1 : 0;
    std::vector<std::string> images;
    for (const auto& n : tmpl.nodes) {
        if (n.kind == NodeKind::Process && rng.below(2) == 0) {
            images.push_back(inst.labels.at(n.name));
        }
    }
    static constexpr Relation kObjectRelations[] = {Relation::FileRead, Relation::FileWrite, Relation::RegistryQuery,
                                                    Relation::ImageLoad, Relation::NetSend};
    std::size_t added = 0;
    std::size_t file_counter = 0;
    while (added < budget) {
        std::string image = !images.empty() ? images.back() : std::string(kBenignImages[rng.below(std::size(kBenignImages))]);
        if (!images.empty()) {
            images.pop_back();
        }
        const NodeId parent = procs[rng.below(procs.size())];
        const NodeId p = add(NodeKind::Process, image);
        procs.push_back(p);
        g.add_edge(parent, p, {Relation::ProcessStart}, {stamp()}, tag);
        ++added;
        const std::size_t objects = 1 + rng.below(3);
        for (std::size_t k = 0; k < objects && added < budget; ++k, ++added) {
            const Relation r = kObjectRelations[rng.below(std::size(kObjectRelations))];
            std::ostringstream label;
            ++file_counter;
            switch (shape_of(r).target) {
                case NodeKind::File:
                    label << R"(C:\ProgramData\Vendor)" << file_counter % 5 << R"(\cache\item)" << file_counter << ".dat";
                    break;
                case NodeKind::Registry:
                    label << R"(HKLM\SOFTWARE\Vendor)" << file_counter % 5 << R"(\Settings\Value)" << file_counter;
                    break;
                case NodeKind::Image:
                    label << R"(C:\Windows\System32\vendorlib)" << file_counter << ".dll";
                    break;
                default:
                    label << "10.20." << file_counter % 250 << '.' << 1 + file_counter % 13 << ":443";
                    break;
            }
            const NodeId o = add(shape_of(r).target, label.str());
            g.add_edge(p, o, {r}, {stamp()}, tag);
        }
    }
    return out;
}

}  // namespace tkg
