#include "tkg/serialize.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <memory>
#include <sstream>
#include <variant>

#include "tkg/error.hpp"

namespace tkg {

namespace {

std::string gml_quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            case '\n': out += "\\n"; break;
            default: out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

// Relation lists are comma-joined; commas inside free-text verbs are
// percent-escaped.
std::string escape_token(const std::string& token) {
    std::string out;
    for (char c : token) {
        if (c == '%') {
            out += "%25";
        } else if (c == ',') {
            out += "%2C";
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string unescape_token(std::string_view token) {
    std::string out;
    for (std::size_t i = 0; i < token.size(); ++i) {
        if (token[i] == '%' && token.substr(i, 3) == "%25") {
            out.push_back('%');
            i += 2;
        } else if (token[i] == '%' && token.substr(i, 3) == "%2C") {
            out.push_back(',');
            i += 2;
        } else {
            out.push_back(token[i]);
        }
    }
    return out;
}

std::string join_relations(const std::set<EdgeRelation>& relations) {
    std::string out;
    for (const auto& r : relations) {
        if (!out.empty()) {
            out.push_back(',');
        }
        out += escape_token(r.token());
    }
    return out;
}

std::set<EdgeRelation> split_relations(std::string_view joined, std::size_t line) {
    std::set<EdgeRelation> out;
    std::size_t pos = 0;
    while (pos <= joined.size()) {
        auto comma = joined.find(',', pos);
        auto piece = joined.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        if (piece.empty()) {
            throw SchemaError("empty relation token", line);
        }
        try {
            out.insert(EdgeRelation::from_token(unescape_token(piece)));
        } catch (const SchemaError& e) {
            throw SchemaError(e.what(), line);
        }
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    return out;
}

void write_string_list(std::ostringstream& out, const char* indent, const char* key, const char* item,
                       const std::set<std::string>& values) {
    if (values.empty()) {
        return;
    }
    out << indent << key << " [\n";
    for (const auto& v : values) {
        out << indent << "  " << item << ' ' << gml_quote(v) << '\n';
    }
    out << indent << "]\n";
}

void write_node(std::ostringstream& out, const KnowledgeNode& n) {
    out << "  node [\n";
    out << "    id " << n.id << '\n';
    out << "    kind " << gml_quote(to_string(n.kind)) << '\n';
    out << "    label " << gml_quote(n.label) << '\n';
    out << "    generalized " << (n.generalized ? 1 : 0) << '\n';
    out << "    common " << (n.common ? 1 : 0) << '\n';
    write_string_list(out, "    ", "extra_labels", "label", n.extra_labels);
    write_string_list(out, "    ", "provenance", "tag", n.provenance);
    out << "  ]\n";
}

// ---- GML reader ---------------------------------------------------------

struct GmlList;
struct GmlValue {
    std::variant<std::int64_t, double, std::string, std::shared_ptr<GmlList>> data;
    std::size_t line = 0;
};
struct GmlList {
    std::vector<std::pair<std::string, GmlValue>> items;
};

class GmlReader {
public:
    explicit GmlReader(std::string_view text) : text_(text) {}

    GmlList parse_document() {
        GmlList top = parse_items(/*nested=*/false);
        return top;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;

    void skip_space() {
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '\n') {
                ++line_;
                ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < text_.size() && text_[pos_] != '\n') {
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    GmlList parse_items(bool nested) {
        GmlList list;
        while (true) {
            skip_space();
            if (pos_ >= text_.size()) {
                if (nested) {
                    throw ParseError("unexpected end of input inside list", line_);
                }
                return list;
            }
            if (text_[pos_] == ']') {
                if (!nested) {
                    throw ParseError("unmatched ']'", line_);
                }
                ++pos_;
                return list;
            }
            std::string key = parse_key();
            skip_space();
            if (pos_ >= text_.size()) {
                throw ParseError("missing value for key '" + key + "'", line_);
            }
            list.items.emplace_back(std::move(key), parse_value());
        }
    }

    std::string parse_key() {
        std::size_t start = pos_;
        if (!std::isalpha(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '_') {
            throw ParseError(std::string("expected key, found '") + text_[pos_] + "'", line_);
        }
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
            ++pos_;
        }
        return std::string(text_.substr(start, pos_ - start));
    }

    GmlValue parse_value() {
        GmlValue v;
        v.line = line_;
        char c = text_[pos_];
        if (c == '[') {
            ++pos_;
            v.data = std::make_shared<GmlList>(parse_items(/*nested=*/true));
            return v;
        }
        if (c == '"') {
            ++pos_;
            std::string s;
            while (true) {
                if (pos_ >= text_.size()) {
                    throw ParseError("unterminated string", v.line);
                }
                char d = text_[pos_++];
                if (d == '"') {
                    break;
                }
                if (d == '\n') {
                    ++line_;
                }
                if (d == '\\') {
                    if (pos_ >= text_.size()) {
                        throw ParseError("unterminated escape", line_);
                    }
                    char e = text_[pos_++];
                    if (e == 'n') {
                        s.push_back('\n');
                    } else if (e == '\\' || e == '"') {
                        s.push_back(e);
                    } else {
                        throw ParseError(std::string("unknown escape '\\") + e + "'", line_);
                    }
                    continue;
                }
                s.push_back(d);
            }
            v.data = std::move(s);
            return v;
        }
        std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
               text_[pos_] != ']' && text_[pos_] != '[') {
            ++pos_;
        }
        auto token = text_.substr(start, pos_ - start);
        std::int64_t i = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), i);
        if (ec == std::errc() && ptr == token.data() + token.size()) {
            v.data = i;
            return v;
        }
        double d = 0;
        auto [dptr, dec] = std::from_chars(token.data(), token.data() + token.size(), d);
        if (dec == std::errc() && dptr == token.data() + token.size() && !token.empty()) {
            v.data = d;
            return v;
        }
        throw ParseError("malformed value '" + std::string(token) + "'", v.line);
    }
};

std::int64_t as_int(const GmlValue& v, std::string_view key) {
    if (auto p = std::get_if<std::int64_t>(&v.data)) {
        return *p;
    }
    throw SchemaError("key '" + std::string(key) + "' must be an integer", v.line);
}

const std::string& as_string(const GmlValue& v, std::string_view key) {
    if (auto p = std::get_if<std::string>(&v.data)) {
        return *p;
    }
    throw SchemaError("key '" + std::string(key) + "' must be a string", v.line);
}

const GmlList& as_list(const GmlValue& v, std::string_view key) {
    if (auto p = std::get_if<std::shared_ptr<GmlList>>(&v.data)) {
        return **p;
    }
    throw SchemaError("key '" + std::string(key) + "' must be a list", v.line);
}

std::set<std::string> string_list(const GmlValue& v, std::string_view key) {
    std::set<std::string> out;
    for (const auto& [k, item] : as_list(v, key).items) {
        out.insert(as_string(item, k));
    }
    return out;
}

KnowledgeNode read_node(const GmlValue& value) {
    KnowledgeNode n;
    bool has_id = false;
    bool has_kind = false;
    bool has_label = false;
    for (const auto& [key, v] : as_list(value, "node").items) {
        if (key == "id") {
            auto id = as_int(v, key);
            if (id < 0) {
                throw SchemaError("negative node id", v.line);
            }
            n.id = static_cast<NodeId>(id);
            has_id = true;
        } else if (key == "kind") {
            auto kind = node_kind_from_string(as_string(v, key));
            if (!kind) {
                throw SchemaError("unknown node kind '" + as_string(v, key) + "'", v.line);
            }
            n.kind = *kind;
            has_kind = true;
        } else if (key == "label") {
            n.label = as_string(v, key);
            has_label = true;
        } else if (key == "generalized") {
            n.generalized = as_int(v, key) != 0;
        } else if (key == "common") {
            n.common = as_int(v, key) != 0;
        } else if (key == "extra_labels") {
            n.extra_labels = string_list(v, key);
        } else if (key == "provenance") {
            n.provenance = string_list(v, key);
        }
    }
    if (!has_id || !has_kind || !has_label) {
        throw SchemaError("node requires id, kind and label", value.line);
    }
    return n;
}

KnowledgeEdge read_edge(const GmlValue& value) {
    KnowledgeEdge e;
    bool has_src = false;
    bool has_dst = false;
    bool has_rel = false;
    for (const auto& [key, v] : as_list(value, "edge").items) {
        if (key == "source") {
            e.src = static_cast<NodeId>(as_int(v, key));
            has_src = true;
        } else if (key == "target") {
            e.dst = static_cast<NodeId>(as_int(v, key));
            has_dst = true;
        } else if (key == "relations") {
            e.relations = split_relations(as_string(v, key), v.line);
            has_rel = true;
        } else if (key == "timestamps") {
            for (const auto& [k, t] : as_list(v, key).items) {
                e.timestamps.push_back(as_int(t, k));
            }
        } else if (key == "provenance") {
            e.provenance = string_list(v, key);
        }
    }
    if (!has_src || !has_dst || !has_rel) {
        throw SchemaError("edge requires source, target and relations", value.line);
    }
    return e;
}

}  // namespace

std::string export_gml(const TechniqueGraph& graph) {
    std::ostringstream out;
    out << "graph [\n";
    out << "  directed 1\n";
    out << "  technique_id " << gml_quote(graph.technique_id) << '\n';
    if (graph.procedure_id) {
        out << "  procedure_id " << gml_quote(*graph.procedure_id) << '\n';
    }
    out << "  source_kind " << gml_quote(to_string(graph.source_kind)) << '\n';
    for (const auto& n : graph.nodes) {
        if (n.kind == NodeKind::Attacker) {
            write_node(out, n);
        }
    }
    for (const auto& n : graph.nodes) {
        if (n.kind != NodeKind::Attacker) {
            write_node(out, n);
        }
    }
    for (const auto& e : graph.edges) {
        out << "  edge [\n";
        out << "    source " << e.src << '\n';
        out << "    target " << e.dst << '\n';
        out << "    relations " << gml_quote(join_relations(e.relations)) << '\n';
        if (!e.timestamps.empty()) {
            out << "    timestamps [\n";
            for (auto t : e.timestamps) {
                out << "      t " << t << '\n';
            }
            out << "    ]\n";
        }
        write_string_list(out, "    ", "provenance", "tag", e.provenance);
        out << "  ]\n";
    }
    out << "]\n";
    return out.str();
}

TechniqueGraph import_gml(std::string_view text) {
    GmlReader reader(text);
    GmlList top = reader.parse_document();
    const GmlValue* body = nullptr;
    for (const auto& [key, v] : top.items) {
        if (key == "graph") {
            body = &v;
        }
    }
    if (!body) {
        throw ParseError("no 'graph' record");
    }
    TechniqueGraph g;
    bool has_technique = false;
    for (const auto& [key, v] : as_list(*body, "graph").items) {
        if (key == "technique_id") {
            g.technique_id = as_string(v, key);
            has_technique = true;
        } else if (key == "procedure_id") {
            g.procedure_id = as_string(v, key);
        } else if (key == "source_kind") {
            auto kind = source_kind_from_string(as_string(v, key));
            if (!kind) {
                throw SchemaError("unknown source kind '" + as_string(v, key) + "'", v.line);
            }
            g.source_kind = *kind;
        } else if (key == "node") {
            g.nodes.push_back(read_node(v));
        } else if (key == "edge") {
            g.edges.push_back(read_edge(v));
        }
    }
    if (!has_technique) {
        throw SchemaError("graph has no technique_id");
    }
    return g;
}

nlohmann::json graph_to_json(const TechniqueGraph& graph) {
    nlohmann::json doc;
    doc["technique_id"] = graph.technique_id;
    doc["procedure_id"] = graph.procedure_id ? nlohmann::json(*graph.procedure_id) : nlohmann::json();
    doc["source_kind"] = to_string(graph.source_kind);
    doc["nodes"] = nlohmann::json::array();
    for (const auto& n : graph.nodes) {
        doc["nodes"].push_back({{"id", n.id},
                                {"kind", to_string(n.kind)},
                                {"label", n.label},
                                {"extra_labels", n.extra_labels},
                                {"provenance", n.provenance},
                                {"generalized", n.generalized},
                                {"common", n.common}});
    }
    doc["edges"] = nlohmann::json::array();
    for (const auto& e : graph.edges) {
        std::vector<std::string> relations;
        for (const auto& r : e.relations) {
            relations.push_back(r.token());
        }
        doc["edges"].push_back({{"src", e.src},
                                {"dst", e.dst},
                                {"relations", relations},
                                {"timestamps", e.timestamps},
                                {"provenance", e.provenance}});
    }
    return doc;
}

TechniqueGraph graph_from_json(const nlohmann::json& doc) {
    try {
        TechniqueGraph g;
        g.technique_id = doc.at("technique_id").get<std::string>();
        if (doc.contains("procedure_id") && !doc["procedure_id"].is_null()) {
            g.procedure_id = doc["procedure_id"].get<std::string>();
        }
        auto kind = source_kind_from_string(doc.at("source_kind").get<std::string>());
        if (!kind) {
            throw SchemaError("unknown source kind");
        }
        g.source_kind = *kind;
        for (const auto& jn : doc.at("nodes")) {
            KnowledgeNode n;
            n.id = jn.at("id").get<NodeId>();
            auto k = node_kind_from_string(jn.at("kind").get<std::string>());
            if (!k) {
                throw SchemaError("unknown node kind '" + jn.at("kind").get<std::string>() + "'");
            }
            n.kind = *k;
            n.label = jn.at("label").get<std::string>();
            n.extra_labels = jn.value("extra_labels", std::set<std::string>{});
            n.provenance = jn.value("provenance", std::set<std::string>{});
            n.generalized = jn.value("generalized", false);
            n.common = jn.value("common", false);
            g.nodes.push_back(std::move(n));
        }
        for (const auto& je : doc.at("edges")) {
            KnowledgeEdge e;
            e.src = je.at("src").get<NodeId>();
            e.dst = je.at("dst").get<NodeId>();
            for (const auto& token : je.at("relations")) {
                e.relations.insert(EdgeRelation::from_token(token.get<std::string>()));
            }
            e.timestamps = je.value("timestamps", std::vector<std::int64_t>{});
            e.provenance = je.value("provenance", std::set<std::string>{});
            g.edges.push_back(std::move(e));
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("graph json: ") + e.what());
    }
}

std::string export_dot(const TechniqueGraph& graph) {
    auto quote = [](std::string_view s) {
        std::string out = "\"";
        for (char c : s) {
            if (c == '"' || c == '\\') {
                out.push_back('\\');
            }
            out.push_back(c);
        }
        return out + "\"";
    };
    std::ostringstream out;
    out << "digraph " << quote(graph.technique_id) << " {\n";
    for (const auto& n : graph.nodes) {
        out << "  n" << n.id << " [label=" << quote(std::string(to_string(n.kind)) + "\n" + n.label)
            << (n.kind == NodeKind::Process ? ", shape=box" : "") << "];\n";
    }
    for (const auto& e : graph.edges) {
        out << "  n" << e.src << " -> n" << e.dst << " [label=" << quote(join_relations(e.relations))
            << "];\n";
    }
    out << "}\n";
    return out.str();
}

TechniqueGraph read_gml_file(const std::filesystem::path& path) {
    return import_gml(read_text_file(path));
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace tkg
