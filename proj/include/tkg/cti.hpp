#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tkg/error.hpp"
#include "tkg/graph.hpp"
#include "tkg/model_client.hpp"

namespace tkg {

class PromptError : public Error {
public:
    using Error::Error;
};

class SchemaViolation : public Error {
public:
    using Error::Error;
};

class EmptyExtraction : public Error {
public:
    explicit EmptyExtraction(const std::string& report_id)
        : Error("report " + report_id + ": extraction has no entities") {}
};

class DanglingRelation : public Error {
public:
    using Error::Error;
};

struct ReportDoc {
    std::string report_id;
    std::string technique_id;
    std::string text;
    std::string source_name;
};

struct CtiEntity {
    std::string name;
    NodeKind kind = NodeKind::Process;
    std::vector<std::string> iocs;

    friend bool operator==(const CtiEntity&, const CtiEntity&) = default;
};

struct CtiRelation {
    std::string src_name;
    std::string verb;
    std::string dst_name;

    friend bool operator==(const CtiRelation&, const CtiRelation&) = default;
};

struct CtiExtraction {
    std::vector<CtiEntity> entities;
    std::vector<CtiRelation> relations;
    std::string raw_model_output;
    std::string template_version;

    friend bool operator==(const CtiExtraction&, const CtiExtraction&) = default;
};

nlohmann::json extraction_to_json(const CtiExtraction& extraction);
CtiExtraction extraction_from_json(const nlohmann::json& doc);

inline constexpr std::string_view kPromptTemplateVersion = "cti-v1";

/// JSON schema embedded in every prompt.
std::string_view output_schema_text();

/// Instantiates the versioned template. Throws PromptError on empty text or
/// a malformed technique id.
std::string build_prompt(const ReportDoc& report);

/// Second-round prompt: the original prompt, the rejected answer and the
/// validation errors.
std::string build_repair_prompt(const ReportDoc& report, std::string_view rejected,
                                const std::vector<std::string>& errors);

enum class IocKind { Url, Registry, FilePath, IPv4, Domain, Md5, Sha1, Sha256, Cve };

std::string_view to_string(IocKind kind);

struct Ioc {
    IocKind kind;
    std::string value;

    friend bool operator==(const Ioc&, const Ioc&) = default;
};

/// Node kind an IOC would become on its own; nullopt for CVE ids.
std::optional<NodeKind> ioc_node_kind(const Ioc& ioc);

/// Indicators in document order, overlapping matches resolved in favour of
/// the enclosing one, duplicates removed. Every value is a substring of
/// `text`.
std::vector<Ioc> extract_iocs(std::string_view text);

/// Maps a free-text kind ("executable", "registry key", "c2 server", ...)
/// onto NodeKind; nullopt when unknown.
std::optional<NodeKind> kind_from_synonym(std::string_view kind);

/// Checks a model answer against the output schema. Returns the parsed
/// extraction (without IOC merging) or the list of violations.
std::variant<CtiExtraction, std::vector<std::string>> validate_model_output(std::string_view response);

/// Prompt, model call, validation with one repair round, IOC merge.
CtiExtraction parse_report(const ReportDoc& report, ModelClient& client);

/// Audited relation closest to a report verb given the target kind.
std::optional<Relation> relation_for_verb(std::string_view verb, NodeKind target);

/// One node per entity and one edge per relation, plus the attacker node
/// linked to every Process without incoming edges.
TechniqueGraph extraction_to_graph(const CtiExtraction& extraction, const std::string& technique_id,
                                   const std::string& report_id);

ReportDoc report_from_json_text(std::string_view text);

/// Lazily reads the report files of a directory in name order.
class ReportStream {
public:
    explicit ReportStream(const std::filesystem::path& directory);
    std::optional<ReportDoc> next();
    std::size_t size() const noexcept { return files_.size(); }

private:
    std::vector<std::filesystem::path> files_;
    std::size_t pos_ = 0;
};

std::vector<ReportDoc> load_reports(const std::filesystem::path& directory);

}  // namespace tkg
