#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tkg/events.hpp"
#include "tkg/graph.hpp"
#include "tkg/log_extract.hpp"

namespace tkg {

enum class AstKind {
    ScriptBlock,
    Pipeline,
    Command,
    StringConstantExpression,
    VariableExpression,
    ExpandableStringExpression,
    AssignmentStatement,
    Other,
};

struct AstNode {
    AstKind kind = AstKind::Other;
    std::string other_kind;  // original kind name when kind == Other
    std::string text;
    std::vector<AstNode> children;

    std::string kind_name() const;
    friend bool operator==(const AstNode&, const AstNode&) = default;
};

class DepthError : public Error {
public:
    explicit DepthError(std::size_t limit)
        : Error("AST nesting exceeds " + std::to_string(limit) + " levels") {}
};

inline constexpr std::size_t kMaxAstDepth = 10'000;

/// Tree from the {kind, text, children} JSON schema. Kind names may carry
/// an "Ast" suffix; unrecognized kinds become Other.
AstNode load_ast(const nlohmann::json& doc);
AstNode load_ast_text(std::string_view json_text);
nlohmann::json ast_to_json(const AstNode& node);

/// Parses the supported script subset: `$name = <expr>` assignments,
/// commands with bare, single-quoted, double-quoted and $variable
/// arguments, `|` pipelines, `;` or newline separated statements and
/// `#` comments. Anything else is a ParseError naming line and column.
AstNode parse_script(std::string_view source);

struct StaticNodeSet {
    std::set<std::string> constants;
    std::map<std::string, std::string> variable_map;  // lowercase name -> value
    std::set<std::string> expanded;
    std::vector<std::string> commands;
    std::set<std::string> unresolved;  // members of `expanded` still holding $-references

    friend bool operator==(const StaticNodeSet&, const StaticNodeSet&) = default;
};

StaticNodeSet collect_static_nodes(const AstNode& root);

struct Candidate {
    NodeKind kind = NodeKind::File;
    std::string label;

    friend bool operator==(const Candidate&, const Candidate&) = default;
    friend auto operator<=>(const Candidate&, const Candidate&) = default;
};

/// Registry, network, file and process entity candidates, sorted and
/// deduplicated. Strings matching no rule are dropped.
std::vector<Candidate> classify_candidates(const StaticNodeSet& set);

/// Candidate/object equality used for supplementation: equal after
/// normalization (registry hives canonicalized) or one is a path suffix of
/// the other with at least two segments.
bool candidate_matches(std::string_view candidate, std::string_view object);

/// Re-admits events of the run whose objects match a candidate but were
/// filtered out of `graph`. Subjects must be chain processes already in the
/// graph; candidates without a witnessing event add nothing.
TechniqueGraph supplement_graph(const TechniqueGraph& graph, std::span<const Candidate> candidates,
                                std::span<const AuditEvent> all_events, const ProcessChain& chain,
                                const std::string& script_id);

}  // namespace tkg
