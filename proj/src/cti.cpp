#include "tkg/cti.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "tkg/prompt_template.hpp"
#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

namespace tkg {

namespace {

constexpr std::string_view kSchema =
    R"({"type":"object","required":["entities","relations"],"properties":{)"
    R"("entities":{"type":"array","items":{"type":"object","required":["name","kind"],"properties":{)"
    R"("name":{"type":"string"},"kind":{"enum":["attacker","process","thread","file","registry","network","image"]},)"
    R"("iocs":{"type":"array","items":{"type":"string"}}}}},)"
    R"("relations":{"type":"array","items":{"type":"object","required":["src_name","verb","dst_name"],"properties":{)"
    R"("src_name":{"type":"string"},"verb":{"type":"string"},"dst_name":{"type":"string"}}}}}})";

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
    return text;
}

std::string kind_word(NodeKind kind) { return to_lower(to_string(kind)); }

}  // namespace

// ---- extraction JSON ------------------------------------------------------

nlohmann::json extraction_to_json(const CtiExtraction& extraction) {
    nlohmann::ordered_json doc;
    doc["template_version"] = extraction.template_version;
    doc["entities"] = nlohmann::ordered_json::array();
    for (const auto& e : extraction.entities) {
        nlohmann::ordered_json entity;
        entity["name"] = e.name;
        entity["kind"] = kind_word(e.kind);
        entity["iocs"] = e.iocs;
        doc["entities"].push_back(entity);
    }
    doc["relations"] = nlohmann::ordered_json::array();
    for (const auto& r : extraction.relations) {
        nlohmann::ordered_json rel;
        rel["src_name"] = r.src_name;
        rel["verb"] = r.verb;
        rel["dst_name"] = r.dst_name;
        doc["relations"].push_back(rel);
    }
    doc["raw_model_output"] = extraction.raw_model_output;
    return nlohmann::json::parse(doc.dump());
}

CtiExtraction extraction_from_json(const nlohmann::json& doc) {
    try {
        CtiExtraction out;
        out.template_version = doc.value("template_version", std::string{});
        out.raw_model_output = doc.value("raw_model_output", std::string{});
        for (const auto& e : doc.at("entities")) {
            auto kind = node_kind_from_string(e.at("kind").get<std::string>());
            if (!kind) {
                kind = kind_from_synonym(e.at("kind").get<std::string>());
            }
            if (!kind) {
                throw SchemaError("unknown entity kind '" + e.at("kind").get<std::string>() + "'");
            }
            out.entities.push_back({e.at("name").get<std::string>(), *kind,
                                    e.value("iocs", std::vector<std::string>{})});
        }
        for (const auto& r : doc.at("relations")) {
            out.relations.push_back({r.at("src_name").get<std::string>(), r.at("verb").get<std::string>(),
                                     r.at("dst_name").get<std::string>()});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("extraction: ") + e.what());
    }
}

// ---- prompts --------------------------------------------------------------

std::string_view output_schema_text() { return kSchema; }

std::string build_prompt(const ReportDoc& report) {
    if (trim(report.text).empty()) {
        throw PromptError("report " + report.report_id + " has empty text");
    }
    if (!is_technique_id(report.technique_id)) {
        throw PromptError("report " + report.report_id + ": malformed technique id '" + report.technique_id + "'");
    }
    std::string prompt(detail::kPromptTemplateV1);
    // report text last, so placeholders inside it are never expanded
    prompt = replace_all(prompt, "{{technique_id}}", report.technique_id);
    prompt = replace_all(prompt, "{{report_id}}", report.report_id);
    prompt = replace_all(prompt, "{{source_name}}", report.source_name);
    prompt = replace_all(prompt, "{{schema}}", kSchema);
    auto at = prompt.find("{{report_text}}");
    if (at != std::string::npos) {
        prompt.replace(at, std::string_view("{{report_text}}").size(), report.text);
    }
    return prompt;
}

std::string build_repair_prompt(const ReportDoc& report, std::string_view rejected,
                                const std::vector<std::string>& errors) {
    std::string prompt = build_prompt(report);
    prompt += "\nYour previous answer was rejected:\n<<<\n";
    prompt += rejected;
    prompt += "\n>>>\nProblems:\n";
    for (const auto& e : errors) {
        prompt += "- " + e + "\n";
    }
    prompt += "Answer again with one corrected JSON object and nothing else.\n";
    return prompt;
}

// ---- IOCs -----------------------------------------------------------------

std::string_view to_string(IocKind kind) {
    switch (kind) {
        case IocKind::Url: return "url";
        case IocKind::Registry: return "registry";
        case IocKind::FilePath: return "file-path";
        case IocKind::IPv4: return "ipv4";
        case IocKind::Domain: return "domain";
        case IocKind::Md5: return "md5";
        case IocKind::Sha1: return "sha1";
        case IocKind::Sha256: return "sha256";
        case IocKind::Cve: return "cve";
    }
    return "?";
}

std::optional<NodeKind> ioc_node_kind(const Ioc& ioc) {
    switch (ioc.kind) {
        case IocKind::Url:
        case IocKind::IPv4:
        case IocKind::Domain:
            return NodeKind::Network;
        case IocKind::Registry:
            return NodeKind::Registry;
        case IocKind::FilePath: {
            auto lower = to_lower(ioc.value);
            if (lower.ends_with(".exe")) return NodeKind::Process;
            if (lower.ends_with(".dll")) return NodeKind::Image;
            return NodeKind::File;
        }
        case IocKind::Md5:
        case IocKind::Sha1:
        case IocKind::Sha256:
            return NodeKind::File;
        case IocKind::Cve:
            return std::nullopt;
    }
    return std::nullopt;
}

std::vector<Ioc> extract_iocs(std::string_view text) {
    struct Pattern {
        IocKind kind;
        std::regex re;
        bool strip_trailing;
    };
    static const std::vector<Pattern> kPatterns = [] {
        const auto icase = std::regex::ECMAScript | std::regex::icase;
        std::vector<Pattern> p;
        p.push_back({IocKind::Url, std::regex(R"(\b(?:https?|ftp)://[^\s"'<>]+)", icase), true});
        p.push_back({IocKind::Registry,
                     std::regex(R"(\b(?:HKEY_[A-Z_]+|HKLM|HKCU|HKCR|HKU)(?::)?(?:\\[^\\\s"'<>,;]+)+)", icase), true});
        p.push_back({IocKind::FilePath, std::regex(R"(\b[A-Za-z]:\\(?:[^\\\s"'<>|*?,;]+\\)*[^\\\s"'<>|*?,;]*)"), true});
        p.push_back({IocKind::FilePath, std::regex(R"(%[A-Za-z_]+%(?:\\[^\\\s"'<>|*?,;]+)+)"), true});
        p.push_back({IocKind::IPv4,
                     std::regex(R"(\b(?:(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)\.){3}(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)\b)"),
                     false});
        p.push_back({IocKind::Sha256, std::regex(R"(\b[0-9a-fA-F]{64}\b)"), false});
        p.push_back({IocKind::Sha1, std::regex(R"(\b[0-9a-fA-F]{40}\b)"), false});
        p.push_back({IocKind::Md5, std::regex(R"(\b[0-9a-fA-F]{32}\b)"), false});
        p.push_back({IocKind::Cve, std::regex(R"(\bCVE-\d{4}-\d{4,}\b)", icase), false});
        p.push_back({IocKind::Domain,
                     std::regex(R"(\b(?:[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?\.)+)"
                                R"((?:com|net|org|info|biz|ru|cn|io|xyz|top|co|uk|de|onion)\b)",
                                icase),
                     false});
        return p;
    }();

    struct Hit {
        std::size_t begin;
        std::size_t end;
        IocKind kind;
    };
    std::vector<Hit> hits;
    const std::string owned(text);
    for (const auto& pattern : kPatterns) {
        for (auto it = std::sregex_iterator(owned.begin(), owned.end(), pattern.re); it != std::sregex_iterator(); ++it) {
            std::size_t begin = static_cast<std::size_t>(it->position());
            std::size_t end = begin + static_cast<std::size_t>(it->length());
            if (pattern.strip_trailing) {
                while (end > begin && std::string_view(".,;:)]'\"").find(owned[end - 1]) != std::string_view::npos) {
                    --end;
                }
            }
            // a dotted quad inside a longer dotted run is a version number
            if (pattern.kind == IocKind::IPv4 &&
                ((begin > 0 && owned[begin - 1] == '.') ||
                 (end + 1 < owned.size() && owned[end] == '.' && std::isdigit(static_cast<unsigned char>(owned[end + 1]))))) {
                continue;
            }
            if (end > begin) {
                hits.push_back({begin, end, pattern.kind});
            }
        }
    }
    // earliest first; at equal start the longer (enclosing) match wins
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.begin != b.begin) return a.begin < b.begin;
        return a.end > b.end;
    });
    std::vector<Ioc> out;
    std::set<std::pair<IocKind, std::string>> seen;
    std::size_t covered = 0;
    for (const auto& h : hits) {
        if (h.begin < covered) {
            continue;
        }
        covered = h.end;
        Ioc ioc{h.kind, owned.substr(h.begin, h.end - h.begin)};
        if (seen.insert({ioc.kind, ioc.value}).second) {
            out.push_back(std::move(ioc));
        }
    }
    return out;
}

// ---- model output ---------------------------------------------------------

std::optional<NodeKind> kind_from_synonym(std::string_view kind) {
    static const std::map<std::string, NodeKind> kSynonyms = {
        {"attacker", NodeKind::Attacker},      {"actor", NodeKind::Attacker},
        {"threat actor", NodeKind::Attacker},  {"adversary", NodeKind::Attacker},
        {"group", NodeKind::Attacker},         {"apt", NodeKind::Attacker},
        {"process", NodeKind::Process},        {"executable", NodeKind::Process},
        {"program", NodeKind::Process},        {"binary", NodeKind::Process},
        {"tool", NodeKind::Process},           {"malware", NodeKind::Process},
        {"command", NodeKind::Process},        {"service", NodeKind::Process},
        {"application", NodeKind::Process},    {"thread", NodeKind::Thread},
        {"file", NodeKind::File},              {"document", NodeKind::File},
        {"script", NodeKind::File},            {"payload", NodeKind::File},
        {"directory", NodeKind::File},         {"folder", NodeKind::File},
        {"path", NodeKind::File},              {"hash", NodeKind::File},
        {"registry", NodeKind::Registry},      {"registry key", NodeKind::Registry},
        {"registry value", NodeKind::Registry}, {"key", NodeKind::Registry},
        {"network", NodeKind::Network},        {"ip", NodeKind::Network},
        {"ip address", NodeKind::Network},     {"address", NodeKind::Network},
        {"domain", NodeKind::Network},         {"url", NodeKind::Network},
        {"host", NodeKind::Network},           {"server", NodeKind::Network},
        {"c2", NodeKind::Network},             {"c2 server", NodeKind::Network},
        {"socket", NodeKind::Network},         {"connection", NodeKind::Network},
        {"image", NodeKind::Image},            {"module", NodeKind::Image},
        {"library", NodeKind::Image},          {"dll", NodeKind::Image},
    };
    std::string key = to_lower(trim(kind));
    std::replace(key.begin(), key.end(), '_', ' ');
    auto it = kSynonyms.find(key);
    if (it == kSynonyms.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::variant<CtiExtraction, std::vector<std::string>> validate_model_output(std::string_view response) {
    std::vector<std::string> errors;
    // tolerate a fenced code block around the object
    std::string body = trim(response);
    if (body.starts_with("```")) {
        auto first_nl = body.find('\n');
        auto last = body.rfind("```");
        if (first_nl != std::string::npos && last > first_nl) {
            body = trim(std::string_view(body).substr(first_nl + 1, last - first_nl - 1));
        }
    }
    auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded()) {
        return std::vector<std::string>{"answer is not valid JSON"};
    }
    if (!doc.is_object()) {
        return std::vector<std::string>{"answer must be a JSON object"};
    }
    CtiExtraction out;
    out.raw_model_output = std::string(response);
    out.template_version = std::string(kPromptTemplateVersion);

    std::map<std::string, std::size_t> by_name;  // lowercase name -> entity index
    auto entities = doc.find("entities");
    if (entities == doc.end() || !entities->is_array()) {
        errors.push_back("'entities' must be an array");
    } else {
        for (std::size_t i = 0; i < entities->size(); ++i) {
            const auto& e = (*entities)[i];
            const std::string where = "entities[" + std::to_string(i) + "]";
            if (!e.is_object() || !e.contains("name") || !e["name"].is_string() || !e.contains("kind") ||
                !e["kind"].is_string()) {
                errors.push_back(where + " needs string 'name' and 'kind'");
                continue;
            }
            std::string name = trim(e["name"].get<std::string>());
            if (name.empty()) {
                errors.push_back(where + " has an empty name");
                continue;
            }
            auto kind = kind_from_synonym(e["kind"].get<std::string>());
            if (!kind) {
                errors.push_back(where + " has unknown kind '" + e["kind"].get<std::string>() + "'");
                continue;
            }
            std::vector<std::string> iocs;
            if (e.contains("iocs")) {
                if (!e["iocs"].is_array()) {
                    errors.push_back(where + ".iocs must be an array of strings");
                    continue;
                }
                for (const auto& v : e["iocs"]) {
                    if (!v.is_string()) {
                        errors.push_back(where + ".iocs must be an array of strings");
                        break;
                    }
                    auto s = trim(v.get<std::string>());
                    if (!s.empty() && std::find(iocs.begin(), iocs.end(), s) == iocs.end()) {
                        iocs.push_back(s);
                    }
                }
            }
            auto [it, fresh] = by_name.emplace(to_lower(name), out.entities.size());
            if (!fresh) {
                auto& existing = out.entities[it->second];
                for (auto& v : iocs) {
                    if (std::find(existing.iocs.begin(), existing.iocs.end(), v) == existing.iocs.end()) {
                        existing.iocs.push_back(v);
                    }
                }
                continue;
            }
            out.entities.push_back({name, *kind, std::move(iocs)});
        }
    }
    auto relations = doc.find("relations");
    if (relations == doc.end() || !relations->is_array()) {
        errors.push_back("'relations' must be an array");
    } else {
        for (std::size_t i = 0; i < relations->size(); ++i) {
            const auto& r = (*relations)[i];
            const std::string where = "relations[" + std::to_string(i) + "]";
            bool ok = r.is_object();
            for (const char* key : {"src_name", "verb", "dst_name"}) {
                ok = ok && r.contains(key) && r[key].is_string();
            }
            if (!ok) {
                errors.push_back(where + " needs string 'src_name', 'verb' and 'dst_name'");
                continue;
            }
            CtiRelation rel{trim(r["src_name"].get<std::string>()), trim(r["verb"].get<std::string>()),
                            trim(r["dst_name"].get<std::string>())};
            if (rel.verb.empty()) {
                errors.push_back(where + " has an empty verb");
                continue;
            }
            bool endpoints = true;
            for (auto* name : {&rel.src_name, &rel.dst_name}) {
                auto it = by_name.find(to_lower(*name));
                if (it == by_name.end()) {
                    errors.push_back(where + " names unknown entity '" + *name + "'");
                    endpoints = false;
                } else {
                    *name = out.entities[it->second].name;
                }
            }
            if (endpoints) {
                out.relations.push_back(std::move(rel));
            }
        }
    }
    if (!errors.empty()) {
        return errors;
    }
    return out;
}

namespace {

void merge_iocs(CtiExtraction& extraction, const std::vector<Ioc>& iocs) {
    for (const auto& ioc : iocs) {
        const std::string needle = to_lower(ioc.value);
        bool placed = false;
        for (auto& entity : extraction.entities) {
            if (std::find(entity.iocs.begin(), entity.iocs.end(), ioc.value) != entity.iocs.end()) {
                placed = true;
                break;
            }
        }
        if (placed) {
            continue;
        }
        for (auto& entity : extraction.entities) {
            if (entity.kind == NodeKind::Attacker) {
                continue;
            }
            const std::string name = to_lower(entity.name);
            bool contained = name.find(needle) != std::string::npos ||
                             (name.size() >= 3 && needle.find(name) != std::string::npos);
            for (const auto& existing : entity.iocs) {
                auto lower = to_lower(existing);
                contained = contained || lower.find(needle) != std::string::npos ||
                            needle.find(lower) != std::string::npos;
            }
            if (contained) {
                entity.iocs.push_back(ioc.value);
                placed = true;
                break;
            }
        }
        if (placed) {
            continue;
        }
        if (auto kind = ioc_node_kind(ioc)) {
            extraction.entities.push_back({ioc.value, *kind, {ioc.value}});
        }
    }
}

}  // namespace

CtiExtraction parse_report(const ReportDoc& report, ModelClient& client) {
    const std::string prompt = build_prompt(report);
    std::string response = client.complete(prompt);
    auto result = validate_model_output(response);
    if (auto* errors = std::get_if<std::vector<std::string>>(&result)) {
        response = client.complete(build_repair_prompt(report, response, *errors));
        result = validate_model_output(response);
        if (auto* again = std::get_if<std::vector<std::string>>(&result)) {
            std::string joined;
            for (const auto& e : *again) {
                joined += (joined.empty() ? "" : "; ") + e;
            }
            throw SchemaViolation("report " + report.report_id + ": model output invalid after repair: " + joined);
        }
    }
    CtiExtraction extraction = std::get<CtiExtraction>(std::move(result));
    merge_iocs(extraction, extract_iocs(report.text));
    if (extraction.entities.empty()) {
        throw EmptyExtraction(report.report_id);
    }
    return extraction;
}

// ---- graph generation -----------------------------------------------------

std::optional<Relation> relation_for_verb(std::string_view verb, NodeKind target) {
    const auto tokens = label_tokens(to_lower(verb));
    auto has = [&](std::initializer_list<std::string_view> words) {
        for (const auto& t : tokens) {
            for (auto w : words) {
                if (t.starts_with(w)) {
                    return true;
                }
            }
        }
        return false;
    };
    switch (target) {
        case NodeKind::Process:
            if (has({"execut", "launch", "run", "spawn", "start", "creat", "invok", "call", "open"}))
                return Relation::ProcessStart;
            return std::nullopt;
        case NodeKind::Thread:
            if (has({"inject", "start", "creat", "spawn"})) return Relation::ThreadStart;
            return std::nullopt;
        case NodeKind::File:
            if (has({"renam", "mov"})) return Relation::FileRename;
            if (has({"drop", "creat", "download", "sav", "copi", "copy", "extract", "install", "plant"}))
                return Relation::FileCreate;
            if (has({"writ", "modif", "append", "encrypt", "overwrit"})) return Relation::FileWrite;
            if (has({"read", "open", "access", "collect", "steal", "dump", "load", "execut", "run"}))
                return Relation::FileRead;
            return std::nullopt;
        case NodeKind::Registry:
            if (has({"quer", "read", "enumerat", "check", "look"})) return Relation::RegistryQuery;
            if (has({"set", "modif", "add", "writ", "chang", "persist", "stor", "register"}))
                return Relation::RegistrySetValue;
            if (has({"creat"})) return Relation::RegistryCreate;
            return std::nullopt;
        case NodeKind::Network:
            if (has({"receiv", "download", "fetch", "retriev"})) return Relation::NetReceive;
            if (has({"connect", "send", "upload", "exfiltrat", "beacon", "communicat", "contact", "post", "transmit", "request"}))
                return Relation::NetSend;
            return std::nullopt;
        case NodeKind::Image:
            if (has({"load", "inject", "sideload"})) return Relation::ImageLoad;
            return std::nullopt;
        case NodeKind::Attacker:
            return std::nullopt;
    }
    return std::nullopt;
}

TechniqueGraph extraction_to_graph(const CtiExtraction& extraction, const std::string& technique_id,
                                   const std::string& report_id) {
    TechniqueGraph g;
    g.technique_id = technique_id;
    g.procedure_id = report_id;
    g.source_kind = SourceKind::Cti;
    const std::string tag = "cti:" + report_id;

    KnowledgeNode attacker;
    attacker.id = 0;
    attacker.kind = NodeKind::Attacker;
    attacker.label = std::string(kAttackerLabel);
    attacker.provenance = {tag};
    g.nodes.push_back(attacker);

    std::map<std::string, NodeId> ids;  // lowercase entity name -> node
    for (const auto& e : extraction.entities) {
        if (e.kind == NodeKind::Attacker) {
            ids[to_lower(e.name)] = 0;
            continue;
        }
        KnowledgeNode n;
        n.kind = e.kind;
        // the first concrete indicator is a better label than prose
        n.label = e.iocs.empty() ? e.name : e.iocs.front();
        for (std::size_t i = 1; i < e.iocs.size(); ++i) {
            n.extra_labels.insert(e.iocs[i]);
        }
        n.extra_labels.insert(e.name);
        n.provenance = {tag};
        tidy_labels(n);
        ids[to_lower(e.name)] = g.add_node(std::move(n));
    }

    std::map<NodeId, std::size_t> in_degree;
    for (const auto& r : extraction.relations) {
        auto s = ids.find(to_lower(r.src_name));
        auto d = ids.find(to_lower(r.dst_name));
        if (s == ids.end() || d == ids.end()) {
            throw DanglingRelation("relation '" + r.verb + "' names an unknown entity");
        }
        if (s->second == d->second) {
            continue;
        }
        std::set<EdgeRelation> rels{EdgeRelation::text(r.verb)};
        if (auto mapped = relation_for_verb(r.verb, g.find_node(d->second)->kind)) {
            rels.insert(*mapped);
        }
        g.add_edge(s->second, d->second, rels, {}, {tag});
        ++in_degree[d->second];
    }
    for (const auto& n : g.nodes) {
        if (n.kind == NodeKind::Process && in_degree[n.id] == 0) {
            g.add_edge(0, n.id, {Relation::ProcessStart}, {}, {tag});
        }
    }
    return g;
}

// ---- report files ---------------------------------------------------------

ReportDoc report_from_json_text(std::string_view text) {
    auto doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw SchemaError("report is not a JSON object");
    }
    ReportDoc r;
    for (auto [key, field] : {std::pair{"report_id", &r.report_id}, std::pair{"technique_id", &r.technique_id},
                              std::pair{"source_name", &r.source_name}, std::pair{"text", &r.text}}) {
        if (!doc.contains(key) || !doc[key].is_string()) {
            throw SchemaError(std::string("report field '") + key + "' must be a string");
        }
        *field = doc[key].get<std::string>();
    }
    if (r.report_id.empty()) {
        throw SchemaError("report_id is empty");
    }
    if (!is_technique_id(r.technique_id)) {
        throw SchemaError("malformed technique_id '" + r.technique_id + "'");
    }
    if (trim(r.text).empty()) {
        throw SchemaError("report text is empty");
    }
    return r;
}

ReportStream::ReportStream(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory)) {
        throw Error("not a directory: " + directory.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files_.push_back(entry.path());
        }
    }
    std::sort(files_.begin(), files_.end());
}

std::optional<ReportDoc> ReportStream::next() {
    if (pos_ >= files_.size()) {
        return std::nullopt;
    }
    const auto& path = files_[pos_++];
    try {
        return report_from_json_text(read_text_file(path));
    } catch (const SchemaError& e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
}

std::vector<ReportDoc> load_reports(const std::filesystem::path& directory) {
    ReportStream stream(directory);
    std::vector<ReportDoc> out;
    while (auto r = stream.next()) {
        out.push_back(std::move(*r));
    }
    return out;
}

}  // namespace tkg
