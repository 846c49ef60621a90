#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tkg/error.hpp"
#include "tkg/graph.hpp"
#include "tkg/merge.hpp"

namespace tkg {

class EmptyInput : public Error {
public:
    EmptyInput() : Error("no input reports") {}
};

/// 1.0 when the denominator is zero.
double precision_of(std::size_t tp, std::size_t fp);
double recall_of(std::size_t tp, std::size_t fn);
/// 0 when precision + recall is zero.
double f1_of(double precision, double recall);

struct EvalReport {
    std::size_t node_tp = 0, node_fp = 0, node_fn = 0;
    std::size_t edge_tp = 0, edge_fp = 0, edge_fn = 0;
    std::map<NodeKind, std::pair<std::size_t, std::size_t>> type_confusion;  // kind -> (fp, fn)
    double node_precision = 1.0, node_recall = 1.0, node_f1 = 1.0;
    double edge_precision = 1.0, edge_recall = 1.0, edge_f1 = 1.0;
};

enum class LabelMatch {
    Exact,   // normalized equality only
    Pattern  // generalized labels also match the concrete labels they cover
};

/// Greedy maximum-similarity node matching within kind, then edge matching
/// over matched endpoints with intersecting relations.
EvalReport compare_graphs(const TechniqueGraph& generated, const TechniqueGraph& truth,
                          LabelMatch mode = LabelMatch::Pattern);

nlohmann::json eval_report_to_json(const EvalReport& report);

/// Sum of several reports' counts with metrics recomputed from the totals.
EvalReport pool_reports(std::span<const EvalReport> reports);

struct RetentionRow {
    std::string technique_id;
    std::size_t nodes_before = 0, nodes_after = 0, edges_before = 0, edges_after = 0;
    double entity_pct = 0, edge_pct = 0;
};

struct RetentionSummary {
    double entity_mean = 0, entity_min = 0, entity_max = 0;
    double edge_mean = 0, edge_min = 0, edge_max = 0;
    /// sum(after) / sum(before) over all rows.
    double entity_pooled = 0, edge_pooled = 0;
    std::vector<RetentionRow> rows;
};

/// Throws EmptyInput for an empty list. Means are half-up to 3 decimals.
RetentionSummary retention_stats(std::span<const MergeReport> reports);

nlohmann::json retention_summary_to_json(const RetentionSummary& summary);
std::string retention_csv(const RetentionSummary& summary);

}  // namespace tkg
