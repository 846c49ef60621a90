#include "tkg/script_ast.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <optional>
#include <regex>
#include <unordered_map>

#include "tkg/text.hpp"

namespace tkg {

namespace {

struct KindName {
    AstKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {AstKind::ScriptBlock, "ScriptBlock"},
    {AstKind::Pipeline, "Pipeline"},
    {AstKind::Command, "Command"},
    {AstKind::StringConstantExpression, "StringConstantExpression"},
    {AstKind::VariableExpression, "VariableExpression"},
    {AstKind::ExpandableStringExpression, "ExpandableStringExpression"},
    {AstKind::AssignmentStatement, "AssignmentStatement"},
};

AstNode make(AstKind kind, std::string text = {}, std::vector<AstNode> children = {}) {
    AstNode n;
    n.kind = kind;
    n.text = std::move(text);
    n.children = std::move(children);
    return n;
}

// ---- JSON trees -----------------------------------------------------------

std::size_t json_depth(const nlohmann::json& doc) {
    std::size_t deepest = 0;
    std::vector<std::pair<const nlohmann::json*, std::size_t>> stack{{&doc, 1}};
    while (!stack.empty()) {
        auto [node, depth] = stack.back();
        stack.pop_back();
        deepest = std::max(deepest, depth);
        if (deepest > kMaxAstDepth) {
            return deepest;
        }
        if (node->is_object()) {
            auto it = node->find("children");
            if (it != node->end() && it->is_array()) {
                for (const auto& child : *it) {
                    stack.emplace_back(&child, depth + 1);
                }
            }
        }
    }
    return deepest;
}

AstNode convert(const nlohmann::json& doc) {
    if (!doc.is_object()) {
        throw SchemaError("AST node must be an object");
    }
    auto kind_it = doc.find("kind");
    if (kind_it == doc.end() || !kind_it->is_string()) {
        throw SchemaError("AST node requires a string 'kind'");
    }
    std::string name = kind_it->get<std::string>();
    std::string_view base = name;
    if (base.size() > 3 && base.substr(base.size() - 3) == "Ast") {
        base.remove_suffix(3);
    }
    AstNode n;
    n.kind = AstKind::Other;
    for (const auto& kn : kKindNames) {
        if (kn.name == base) {
            n.kind = kn.kind;
        }
    }
    if (n.kind == AstKind::Other) {
        n.other_kind = name;
    }
    auto text_it = doc.find("text");
    if (text_it != doc.end() && !text_it->is_null()) {
        if (!text_it->is_string()) {
            throw SchemaError("AST 'text' must be a string");
        }
        n.text = text_it->get<std::string>();
    }
    auto children_it = doc.find("children");
    if (children_it != doc.end() && !children_it->is_null()) {
        if (!children_it->is_array()) {
            throw SchemaError("AST 'children' must be an array");
        }
        for (const auto& child : *children_it) {
            n.children.push_back(convert(child));
        }
    }
    const bool leaf_expression = n.kind == AstKind::StringConstantExpression ||
                                 n.kind == AstKind::VariableExpression ||
                                 n.kind == AstKind::ExpandableStringExpression;
    if (leaf_expression && (text_it == doc.end() || text_it->is_null())) {
        throw SchemaError(n.kind_name() + " node requires text");
    }
    return n;
}

// ---- script subset --------------------------------------------------------

enum class TokenType { Word, Single, Double, Variable, Pipe, Assign };

struct Token {
    TokenType type;
    std::string text;
    std::size_t line;
    std::size_t column;
};

bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class ScriptParser {
public:
    explicit ScriptParser(std::string_view src) : src_(src) {}

    AstNode parse() {
        AstNode root = make(AstKind::ScriptBlock);
        std::vector<Token> statement;
        while (true) {
            bool end_of_statement = false;
            bool end_of_input = !next_token(statement, end_of_statement);
            if (end_of_statement || end_of_input) {
                if (!statement.empty()) {
                    root.children.push_back(build_statement(statement));
                    statement.clear();
                }
            }
            if (end_of_input) {
                break;
            }
        }
        return root;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t col_ = 1;

    [[noreturn]] void fail(const std::string& what, std::size_t line, std::size_t col) const {
        throw ParseError(what + " at column " + std::to_string(col), line);
    }

    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }

    char advance() {
        char c = src_[pos_++];
        if (c == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        return c;
    }

    // Reads one token into `out`. Returns false at end of input; sets
    // `end_of_statement` on newline or ';'.
    bool next_token(std::vector<Token>& out, bool& end_of_statement) {
        while (pos_ < src_.size()) {
            char c = peek();
            if (c == '\n' || c == ';') {
                advance();
                end_of_statement = true;
                return true;
            }
            if (c == ' ' || c == '\t' || c == '\r') {
                advance();
                continue;
            }
            if (c == '#') {
                while (pos_ < src_.size() && peek() != '\n') {
                    advance();
                }
                continue;
            }
            const std::size_t line = line_;
            const std::size_t col = col_;
            if (c == '`') {
                fail("backtick escapes and line continuations are not supported", line, col);
            }
            if (c == '|') {
                advance();
                out.push_back({TokenType::Pipe, "|", line, col});
                return true;
            }
            if (c == '=') {
                advance();
                out.push_back({TokenType::Assign, "=", line, col});
                return true;
            }
            if (c == '\'') {
                out.push_back({TokenType::Single, read_single(line, col), line, col});
                return true;
            }
            if (c == '"') {
                out.push_back({TokenType::Double, read_double(line, col), line, col});
                return true;
            }
            if (c == '$') {
                out.push_back({TokenType::Variable, read_variable(line, col), line, col});
                return true;
            }
            out.push_back({TokenType::Word, read_word(line, col), line, col});
            return true;
        }
        return false;
    }

    std::string read_single(std::size_t line, std::size_t col) {
        advance();
        std::string s;
        while (true) {
            if (pos_ >= src_.size()) {
                fail("unterminated single-quoted string", line, col);
            }
            char c = advance();
            if (c == '\'') {
                if (peek() == '\'') {
                    advance();
                    s.push_back('\'');
                    continue;
                }
                return s;
            }
            s.push_back(c);
        }
    }

    std::string read_double(std::size_t line, std::size_t col) {
        advance();
        std::string s;
        while (true) {
            if (pos_ >= src_.size()) {
                fail("unterminated double-quoted string", line, col);
            }
            if (peek() == '`') {
                fail("backtick escapes are not supported", line_, col_);
            }
            if (peek() == '$' && peek(1) == '(') {
                fail("subexpressions are not supported", line_, col_);
            }
            char c = advance();
            if (c == '"') {
                if (peek() == '"') {
                    advance();
                    s.push_back('"');
                    continue;
                }
                return s;
            }
            s.push_back(c);
        }
    }

    std::string read_variable(std::size_t line, std::size_t col) {
        advance();  // '$'
        std::string name;
        if (peek() == '{') {
            advance();
            while (pos_ < src_.size() && peek() != '}') {
                if (peek() == '\n') {
                    fail("unterminated ${...} reference", line, col);
                }
                name.push_back(advance());
            }
            if (pos_ >= src_.size()) {
                fail("unterminated ${...} reference", line, col);
            }
            advance();
        } else {
            if (peek() == '(') {
                fail("subexpressions are not supported", line, col);
            }
            while (pos_ < src_.size() && (is_name_char(peek()) || peek() == ':')) {
                name.push_back(advance());
            }
        }
        if (name.empty()) {
            fail("empty variable name", line, col);
        }
        char next = peek();
        if (next != '\0' && next != ' ' && next != '\t' && next != '\r' && next != '\n' && next != ';' &&
            next != '|' && next != '=') {
            fail(std::string("unsupported character '") + next + "' after variable", line_, col_);
        }
        return name;
    }

    std::string read_word(std::size_t line, std::size_t col) {
        std::string w;
        while (pos_ < src_.size()) {
            char c = peek();
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ';' || c == '|' || c == '\'' ||
                c == '"') {
                break;
            }
            if (c == '`' || c == '(' || c == ')' || c == '{' || c == '}' || c == '&' ||
                (c == '@' && w.empty())) {
                fail(std::string("unsupported character '") + c + "'", line_, col_);
            }
            w.push_back(advance());
        }
        if (w.empty()) {
            fail("empty word", line, col);
        }
        return w;
    }

    static bool has_reference(std::string_view s) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            if (s[i] == '$' && (is_name_char(s[i + 1]) || s[i + 1] == '{')) {
                return true;
            }
        }
        return false;
    }

    static AstNode argument(const Token& t) {
        switch (t.type) {
            case TokenType::Single:
                return make(AstKind::StringConstantExpression, t.text);
            case TokenType::Double:
            case TokenType::Word:
                return make(has_reference(t.text) ? AstKind::ExpandableStringExpression
                                                  : AstKind::StringConstantExpression,
                            t.text);
            case TokenType::Variable:
                return make(AstKind::VariableExpression, t.text);
            default:
                break;
        }
        return make(AstKind::Other);
    }

    AstNode build_pipeline(std::span<const Token> tokens) {
        AstNode pipeline = make(AstKind::Pipeline);
        if (tokens.size() == 1 && tokens[0].type == TokenType::Variable) {
            pipeline.children.push_back(argument(tokens[0]));
            return pipeline;
        }
        std::vector<Token> current;
        auto flush = [&](const Token* at) {
            if (current.empty()) {
                const auto& where = at ? *at : tokens.back();
                fail("empty pipeline element", where.line, where.column);
            }
            if (current.front().type == TokenType::Variable) {
                fail("a command name is required", current.front().line, current.front().column);
            }
            AstNode command = make(AstKind::Command);
            for (const auto& t : current) {
                command.children.push_back(argument(t));
            }
            pipeline.children.push_back(std::move(command));
            current.clear();
        };
        for (const auto& t : tokens) {
            if (t.type == TokenType::Assign) {
                fail("unexpected '='", t.line, t.column);
            }
            if (t.type == TokenType::Pipe) {
                flush(&t);
                continue;
            }
            current.push_back(t);
        }
        flush(nullptr);
        return pipeline;
    }

    AstNode build_statement(const std::vector<Token>& tokens) {
        if (tokens.size() >= 2 && tokens[0].type == TokenType::Variable &&
            tokens[1].type == TokenType::Assign) {
            std::span<const Token> rhs(tokens.begin() + 2, tokens.end());
            if (rhs.empty()) {
                fail("assignment without a value", tokens[1].line, tokens[1].column);
            }
            AstNode assignment = make(AstKind::AssignmentStatement);
            assignment.children.push_back(make(AstKind::VariableExpression, tokens[0].text));
            const bool single_expression = rhs.size() == 1 && (rhs[0].type == TokenType::Single ||
                                                               rhs[0].type == TokenType::Double ||
                                                               rhs[0].type == TokenType::Variable);
            if (single_expression) {
                assignment.children.push_back(argument(rhs[0]));
            } else {
                assignment.children.push_back(build_pipeline(rhs));
            }
            return assignment;
        }
        return build_pipeline(tokens);
    }
};

// ---- static node collection ----------------------------------------------

struct Reference {
    std::size_t begin;
    std::size_t end;
    std::string name;  // lowercase
};

std::vector<Reference> find_references(std::string_view s) {
    std::vector<Reference> refs;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '$' || i + 1 >= s.size()) {
            continue;
        }
        if (s[i + 1] == '{') {
            auto close = s.find('}', i + 2);
            if (close == std::string_view::npos) {
                continue;
            }
            refs.push_back({i, close + 1, to_lower(s.substr(i + 2, close - i - 2))});
            i = close;
            continue;
        }
        std::size_t j = i + 1;
        while (j < s.size() && is_name_char(s[j])) {
            ++j;
        }
        // scope qualifier such as $env:TEMP
        if (j < s.size() && s[j] == ':' && j + 1 < s.size() && is_name_char(s[j + 1])) {
            ++j;
            while (j < s.size() && is_name_char(s[j])) {
                ++j;
            }
        }
        if (j > i + 1) {
            refs.push_back({i, j, to_lower(s.substr(i + 1, j - i - 1))});
            i = j - 1;
        }
    }
    return refs;
}

class Resolver {
public:
    explicit Resolver(const AstNode& root) { gather(root); }

    std::optional<std::string> value_of(const std::string& name) {
        auto cached = cache_.find(name);
        if (cached != cache_.end()) {
            return cached->second;
        }
        auto it = bindings_.find(name);
        if (it == bindings_.end() || visiting_.count(name)) {
            return std::nullopt;
        }
        visiting_.insert(name);
        std::optional<std::string> value;
        const AstNode& rhs = *it->second;
        if (rhs.kind == AstKind::StringConstantExpression) {
            value = rhs.text;
        } else if (rhs.kind == AstKind::ExpandableStringExpression) {
            auto [text, complete] = expand(rhs.text);
            if (complete) {
                value = text;
            }
        } else if (rhs.kind == AstKind::VariableExpression) {
            value = value_of(to_lower(rhs.text));
        }
        visiting_.erase(name);
        cache_[name] = value;
        return value;
    }

    std::pair<std::string, bool> expand(std::string_view text) {
        std::string out;
        bool complete = true;
        std::size_t cursor = 0;
        for (const auto& ref : find_references(text)) {
            out.append(text.substr(cursor, ref.begin - cursor));
            auto value = value_of(ref.name);
            if (value) {
                out += *value;
            } else {
                out.append(text.substr(ref.begin, ref.end - ref.begin));
                complete = false;
            }
            cursor = ref.end;
        }
        out.append(text.substr(cursor));
        return {out, complete};
    }

    const std::map<std::string, const AstNode*>& bindings() const { return bindings_; }

private:
    std::map<std::string, const AstNode*> bindings_;  // last write wins
    std::map<std::string, std::optional<std::string>> cache_;
    std::set<std::string> visiting_;

    void gather(const AstNode& node) {
        if (node.kind == AstKind::AssignmentStatement && node.children.size() >= 2 &&
            node.children[0].kind == AstKind::VariableExpression) {
            bindings_[to_lower(node.children[0].text)] = &node.children[1];
        }
        for (const auto& child : node.children) {
            gather(child);
        }
    }
};

void walk(const AstNode& node, const std::function<void(const AstNode&)>& visit) {
    visit(node);
    for (const auto& child : node.children) {
        walk(child, visit);
    }
}

std::string canonical_hive(std::string_view label) {
    std::string n = normalize_object(label);
    static const std::pair<std::string_view, std::string_view> kHives[] = {
        {"hkey_local_machine", "hklm"}, {"hkey_current_user", "hkcu"}, {"hkey_classes_root", "hkcr"},
        {"hkey_users", "hku"},          {"hklm:", "hklm"},             {"hkcu:", "hkcu"},
        {"hkcr:", "hkcr"},              {"hku:", "hku"},
    };
    for (const auto& [from, to] : kHives) {
        if (n.rfind(from, 0) == 0 && (n.size() == from.size() || is_path_separator(n[from.size()]))) {
            return std::string(to) + n.substr(from.size());
        }
    }
    return n;
}

bool is_registry_label(std::string_view s) {
    for (std::string_view hive : {"HKEY_", "HKLM", "HKCU", "HKCR", "HKU\\", "HKU:"}) {
        if (starts_with_icase(s, hive)) {
            return true;
        }
    }
    return false;
}

bool is_network_label(const std::string& s) {
    static const std::regex kUrl(R"(^[A-Za-z][A-Za-z0-9+.-]*://\S+$)");
    static const std::regex kIp(R"(^(\d{1,3}\.){3}\d{1,3}(:\d{1,5})?$)");
    return std::regex_match(s, kUrl) || std::regex_match(s, kIp);
}

bool is_process_label(const std::string& s) {
    static const std::regex kProcess(R"(^\w[\w.-]*\.(exe|dll|ps1|vbs|bat|cmd)$)", std::regex::icase);
    return std::regex_match(s, kProcess);
}

bool has_file_extension(const std::string& s) {
    static const std::regex kFile(
        R"(^[^\s]+\.(txt|doc|docx|docm|xls|xlsx|xlsm|ppt|pptx|pdf|rtf|zip|rar|7z|tmp|dat|log|ini|lnk|js|jse|hta|msi|bin|jpg|png|csv|xml|json|reg|sct|inf|scr|sys|db|cab|iso|vbe|wsf|ps1xml|txt)$)",
        std::regex::icase);
    return std::regex_match(s, kFile);
}

}  // namespace

std::string AstNode::kind_name() const {
    if (kind == AstKind::Other) {
        return other_kind.empty() ? "Other" : other_kind;
    }
    for (const auto& kn : kKindNames) {
        if (kn.kind == kind) {
            return std::string(kn.name);
        }
    }
    return "Other";
}

AstNode load_ast(const nlohmann::json& doc) {
    if (json_depth(doc) > kMaxAstDepth) {
        throw DepthError(kMaxAstDepth);
    }
    return convert(doc);
}

AstNode load_ast_text(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("AST json: ") + e.what());
    }
    return load_ast(doc);
}

nlohmann::json ast_to_json(const AstNode& node) {
    nlohmann::json out;
    out["kind"] = node.kind_name();
    out["text"] = node.text;
    out["children"] = nlohmann::json::array();
    for (const auto& child : node.children) {
        out["children"].push_back(ast_to_json(child));
    }
    return out;
}

AstNode parse_script(std::string_view source) { return ScriptParser(source).parse(); }

StaticNodeSet collect_static_nodes(const AstNode& root) {
    StaticNodeSet out;
    Resolver resolver(root);
    for (const auto& [name, rhs] : resolver.bindings()) {
        if (auto value = resolver.value_of(name)) {
            out.variable_map[name] = *value;
        }
    }
    walk(root, [&](const AstNode& node) {
        switch (node.kind) {
            case AstKind::StringConstantExpression:
                out.constants.insert(node.text);
                break;
            case AstKind::ExpandableStringExpression: {
                auto [text, complete] = resolver.expand(node.text);
                out.expanded.insert(text);
                if (!complete) {
                    out.unresolved.insert(text);
                }
                break;
            }
            case AstKind::Command:
                for (const auto& child : node.children) {
                    if (child.kind == AstKind::StringConstantExpression) {
                        out.commands.push_back(child.text);
                        break;
                    }
                }
                break;
            default:
                break;
        }
    });
    return out;
}

std::vector<Candidate> classify_candidates(const StaticNodeSet& set) {
    std::set<std::string> strings(set.constants.begin(), set.constants.end());
    strings.insert(set.expanded.begin(), set.expanded.end());
    for (const auto& [name, value] : set.variable_map) {
        strings.insert(value);
    }
    strings.insert(set.commands.begin(), set.commands.end());
    const std::set<std::string> commands(set.commands.begin(), set.commands.end());

    std::set<Candidate> out;
    for (const auto& raw : strings) {
        std::string s = trim(raw);
        if (s.empty()) {
            continue;
        }
        if (is_registry_label(s)) {
            out.insert({NodeKind::Registry, s});
        } else if (is_network_label(s)) {
            out.insert({NodeKind::Network, s});
        } else if (s.find('\\') != std::string::npos || s.find('/') != std::string::npos) {
            out.insert({NodeKind::File, s});
        } else if (is_process_label(s) || commands.count(raw)) {
            out.insert({NodeKind::Process, s});
        } else if (has_file_extension(s)) {
            out.insert({NodeKind::File, s});
        }
    }
    return {out.begin(), out.end()};
}

bool candidate_matches(std::string_view candidate, std::string_view object) {
    auto c = canonical_hive(candidate);
    auto o = canonical_hive(object);
    if (c == o) {
        return true;
    }
    return is_path_suffix(c, o, 2) || is_path_suffix(o, c, 2);
}

TechniqueGraph supplement_graph(const TechniqueGraph& graph, std::span<const Candidate> candidates,
                                std::span<const AuditEvent> all_events, const ProcessChain& chain,
                                const std::string& script_id) {
    TechniqueGraph out = graph;
    if (candidates.empty()) {
        return out;
    }
    const std::string static_tag = "static:" + script_id;
    std::set<std::string> log_tags;
    if (graph.procedure_id) {
        log_tags.insert("log:" + *graph.procedure_id);
    }

    auto find_subject = [&](std::int64_t pid) -> std::optional<NodeId> {
        auto it = chain.nodes.find(pid);
        if (it == chain.nodes.end()) {
            return std::nullopt;
        }
        const auto key = normalize_object(it->second.label);
        std::optional<NodeId> best;
        for (const auto& n : out.nodes) {
            if (n.kind == it->second.kind && normalize_object(n.label) == key && (!best || n.id < *best)) {
                best = n.id;
            }
        }
        return best;
    };
    auto find_object = [&](NodeKind kind, const std::string& object) -> std::optional<NodeId> {
        const auto key = normalize_object(object);
        for (const auto& n : out.nodes) {
            if (n.kind != kind) {
                continue;
            }
            if (normalize_object(n.label) == key) {
                return n.id;
            }
            for (const auto& extra : n.extra_labels) {
                if (normalize_object(extra) == key) {
                    return n.id;
                }
            }
        }
        return std::nullopt;
    };

    for (const auto& ev : all_events) {
        if (!chain.contains(ev.pid) || ev.object.empty()) {
            continue;
        }
        auto relation = relation_for(ev.event_type, ev.event_name);
        if (!relation || ev.event_type == EventType::Process || ev.event_type == EventType::Thread) {
            continue;  // creations are never filtered, so there is nothing to restore
        }
        const NodeKind kind = object_kind(ev.event_type);
        const bool matched = std::any_of(candidates.begin(), candidates.end(), [&](const Candidate& c) {
            const bool kind_ok = c.kind == kind || (c.kind == NodeKind::File && kind == NodeKind::Image);
            return kind_ok && candidate_matches(c.label, ev.object);
        });
        if (!matched) {
            continue;
        }
        auto subject = find_subject(ev.pid);
        if (!subject) {
            continue;
        }
        auto object = find_object(kind, ev.object);
        if (object) {
            auto edge = std::find_if(out.edges.begin(), out.edges.end(), [&](const KnowledgeEdge& e) {
                return e.src == *subject && e.dst == *object;
            });
            if (edge != out.edges.end() && edge->relations.count(*relation)) {
                continue;  // already present
            }
        } else {
            KnowledgeNode n;
            n.kind = kind;
            n.label = ev.object;
            n.provenance = log_tags;
            n.provenance.insert(static_tag);
            object = out.add_node(std::move(n));
        }
        std::set<std::string> provenance = log_tags;
        provenance.insert(static_tag);
        out.add_edge(*subject, *object, {*relation}, {ev.ts}, provenance);
    }
    return out;
}

}  // namespace tkg
