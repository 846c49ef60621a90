#include "tkg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <tuple>

#include "tkg/text.hpp"

namespace tkg {

double precision_of(std::size_t tp, std::size_t fp) {
    return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall_of(std::size_t tp, std::size_t fn) {
    return tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1_of(double precision, double recall) {
    return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

namespace {

void finish(EvalReport& r) {
    r.node_precision = precision_of(r.node_tp, r.node_fp);
    r.node_recall = recall_of(r.node_tp, r.node_fn);
    r.node_f1 = f1_of(r.node_precision, r.node_recall);
    r.edge_precision = precision_of(r.edge_tp, r.edge_fp);
    r.edge_recall = recall_of(r.edge_tp, r.edge_fn);
    r.edge_f1 = f1_of(r.edge_precision, r.edge_recall);
}

std::vector<const KnowledgeNode*> sorted_nodes(const TechniqueGraph& g) {
    std::vector<const KnowledgeNode*> out;
    for (const auto& n : g.nodes) {
        out.push_back(&n);
    }
    std::sort(out.begin(), out.end(), [](const KnowledgeNode* a, const KnowledgeNode* b) {
        return std::make_tuple(a->kind, normalize_object(a->label), a->label, a->id) <
               std::make_tuple(b->kind, normalize_object(b->label), b->label, b->id);
    });
    return out;
}

double label_score(const KnowledgeNode& a, const KnowledgeNode& b, LabelMatch mode) {
    if (a.kind != b.kind) {
        return 0.0;
    }
    if (a.kind == NodeKind::Attacker) {
        return 1.0;
    }
    if (normalize_object(a.label) == normalize_object(b.label)) {
        return 1.0;
    }
    if (mode == LabelMatch::Pattern && labels_compatible(a.label, b.label)) {
        return 0.5;
    }
    return 0.0;
}


long long thousandths(double pct) { return std::llround(pct * 1000.0); }

double mean_half_up(const std::vector<long long>& values) {
    long long sum = 0;
    for (auto v : values) {
        sum += v;
    }
    const long long n = static_cast<long long>(values.size());
    return static_cast<double>((2 * sum + n) / (2 * n)) / 1000.0;
}

std::string fixed3(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << v;
    return out.str();
}

}  // namespace

EvalReport compare_graphs(const TechniqueGraph& generated, const TechniqueGraph& truth, LabelMatch mode) {
    EvalReport r;
    const auto gen = sorted_nodes(generated);
    const auto tru = sorted_nodes(truth);

    struct Candidate {
        double score;
        std::size_t i;
        std::size_t j;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        for (std::size_t j = 0; j < tru.size(); ++j) {
            double s = label_score(*gen[i], *tru[j], mode);
            if (s > 0) {
                candidates.push_back({s, i, j});
            }
        }
    }
    // symmetric in (generated, truth) so that swapping inputs swaps fp and fn
    auto key = [](const Candidate& c) {
        const std::size_t gap = c.i > c.j ? c.i - c.j : c.j - c.i;
        return std::make_tuple(-c.score, gap, std::min(c.i, c.j), std::max(c.i, c.j));
    };
    std::sort(candidates.begin(), candidates.end(),
              [&](const Candidate& a, const Candidate& b) { return key(a) < key(b); });
    std::vector<char> gen_used(gen.size(), 0), tru_used(tru.size(), 0);
    std::map<NodeId, NodeId> match;  // generated id -> truth id
    for (const auto& c : candidates) {
        if (gen_used[c.i] || tru_used[c.j]) {
            continue;
        }
        gen_used[c.i] = tru_used[c.j] = 1;
        match[gen[c.i]->id] = tru[c.j]->id;
    }
    r.node_tp = match.size();
    r.node_fp = gen.size() - r.node_tp;
    r.node_fn = tru.size() - r.node_tp;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        if (!gen_used[i]) {
            ++r.type_confusion[gen[i]->kind].first;
        }
    }
    for (std::size_t j = 0; j < tru.size(); ++j) {
        if (!tru_used[j]) {
            ++r.type_confusion[tru[j]->kind].second;
        }
    }

    std::map<std::pair<NodeId, NodeId>, const KnowledgeEdge*> truth_edges;
    for (const auto& e : truth.edges) {
        truth_edges[{e.src, e.dst}] = &e;
    }
    for (const auto& e : generated.edges) {
        auto s = match.find(e.src);
        auto d = match.find(e.dst);
        if (s == match.end() || d == match.end()) {
            continue;
        }
        auto t = truth_edges.find({s->second, d->second});
        if (t != truth_edges.end() && relations_compatible(e.relations, t->second->relations)) {
            ++r.edge_tp;
        }
    }
    r.edge_fp = generated.edges.size() - r.edge_tp;
    r.edge_fn = truth.edges.size() - r.edge_tp;
    finish(r);
    return r;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::ordered_json doc;
    doc["nodes"] = {{"tp", r.node_tp}, {"fp", r.node_fp}, {"fn", r.node_fn},
                    {"precision", r.node_precision}, {"recall", r.node_recall}, {"f1", r.node_f1}};
    doc["edges"] = {{"tp", r.edge_tp}, {"fp", r.edge_fp}, {"fn", r.edge_fn},
                    {"precision", r.edge_precision}, {"recall", r.edge_recall}, {"f1", r.edge_f1}};
    nlohmann::ordered_json confusion = nlohmann::ordered_json::object();
    for (const auto& [kind, counts] : r.type_confusion) {
        confusion[std::string(to_string(kind))] = {{"fp", counts.first}, {"fn", counts.second}};
    }
    doc["type_confusion"] = confusion;
    return nlohmann::json::parse(doc.dump());
}

EvalReport pool_reports(std::span<const EvalReport> reports) {
    EvalReport total;
    for (const auto& r : reports) {
        total.node_tp += r.node_tp;
        total.node_fp += r.node_fp;
        total.node_fn += r.node_fn;
        total.edge_tp += r.edge_tp;
        total.edge_fp += r.edge_fp;
        total.edge_fn += r.edge_fn;
        for (const auto& [kind, counts] : r.type_confusion) {
            total.type_confusion[kind].first += counts.first;
            total.type_confusion[kind].second += counts.second;
        }
    }
    finish(total);
    return total;
}

RetentionSummary retention_stats(std::span<const MergeReport> reports) {
    if (reports.empty()) {
        throw EmptyInput();
    }
    RetentionSummary s;
    std::vector<long long> entity, edge;
    std::size_t nb = 0, na = 0, eb = 0, ea = 0;
    for (const auto& r : reports) {
        RetentionRow row{r.technique_id,
                         r.nodes_before,
                         r.nodes_after,
                         r.edges_before,
                         r.edges_after,
                         retention_pct(r.nodes_after, r.nodes_before),
                         retention_pct(r.edges_after, r.edges_before)};
        entity.push_back(thousandths(row.entity_pct));
        edge.push_back(thousandths(row.edge_pct));
        nb += r.nodes_before;
        na += r.nodes_after;
        eb += r.edges_before;
        ea += r.edges_after;
        s.rows.push_back(std::move(row));
    }
    s.entity_mean = mean_half_up(entity);
    s.edge_mean = mean_half_up(edge);
    s.entity_min = *std::min_element(entity.begin(), entity.end()) / 1000.0;
    s.entity_max = *std::max_element(entity.begin(), entity.end()) / 1000.0;
    s.edge_min = *std::min_element(edge.begin(), edge.end()) / 1000.0;
    s.edge_max = *std::max_element(edge.begin(), edge.end()) / 1000.0;
    s.entity_pooled = retention_pct(na, nb);
    s.edge_pooled = retention_pct(ea, eb);
    return s;
}

nlohmann::json retention_summary_to_json(const RetentionSummary& s) {
    nlohmann::ordered_json doc;
    doc["entity"] = {{"mean", s.entity_mean}, {"min", s.entity_min}, {"max", s.entity_max}, {"pooled", s.entity_pooled}};
    doc["edge"] = {{"mean", s.edge_mean}, {"min", s.edge_min}, {"max", s.edge_max}, {"pooled", s.edge_pooled}};
    doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : s.rows) {
        doc["rows"].push_back({{"technique_id", r.technique_id},
                               {"nodes_before", r.nodes_before},
                               {"nodes_after", r.nodes_after},
                               {"edges_before", r.edges_before},
                               {"edges_after", r.edges_after},
                               {"entity_retention_pct", r.entity_pct},
                               {"edge_retention_pct", r.edge_pct}});
    }
    return nlohmann::json::parse(doc.dump());
}

std::string retention_csv(const RetentionSummary& s) {
    std::ostringstream out;
    out << "technique_id,nodes_before,nodes_after,entity_retention_pct,edges_before,edges_after,edge_retention_pct\n";
    for (const auto& r : s.rows) {
        out << r.technique_id << ',' << r.nodes_before << ',' << r.nodes_after << ',' << fixed3(r.entity_pct) << ','
            << r.edges_before << ',' << r.edges_after << ',' << fixed3(r.edge_pct) << '\n';
    }
    return out.str();
}

}  // namespace tkg
