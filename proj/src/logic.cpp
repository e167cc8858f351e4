#include "kml/logic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kml/version.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_dim(const Vec& e, const EmbeddingTable& emb) {
    if (e.size() != emb.dim())
        throw DimensionMismatch("operand has dim " + std::to_string(e.size()) +
                                ", embeddings have " + std::to_string(emb.dim()));
}

Vec sigmoid_scores(const Vec& e, const EmbeddingTable& emb,
                   const std::vector<std::string>& candidates) {
    Vec out(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        out[i] = sigmoid(dot(e, emb.unit(candidates[i])));
    return out;
}

} // namespace

std::vector<std::string> logic_candidates(const KnowledgeGraph& kg, const RelationType& rel,
                                          bool type_filtered) {
    std::vector<std::string> out;
    if (type_filtered) {
        for (EntityType t : rel.tail_types()) {
            if (is_sentinel(t)) continue;
            auto ids = kg.entities_of(t);
            out.insert(out.end(), ids.begin(), ids.end());
        }
        std::sort(out.begin(), out.end());
    } else {
        for (const auto& id : kg.all_entity_ids())
            if (!is_sentinel(kg.entity(id).etype)) out.push_back(id);
    }
    return out;
}

EntityScoreVector score_and(const Vec& e_i, const Vec& e_j, const EmbeddingTable& emb,
                            const std::vector<std::string>& candidates) {
    check_dim(e_i, emb);
    check_dim(e_j, emb);
    EntityScoreVector v;
    v.ids = candidates;
    v.provenance = "and";
    const Vec a = sigmoid_scores(e_i, emb, candidates);
    const Vec b = sigmoid_scores(e_j, emb, candidates);
    v.scores.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) v.scores[i] = a[i] * b[i];
    return v;
}

EntityScoreVector score_or(const Vec& e_i, const Vec& e_j, const EmbeddingTable& emb,
                           const std::vector<std::string>& candidates) {
    check_dim(e_i, emb);
    check_dim(e_j, emb);
    EntityScoreVector v;
    v.ids = candidates;
    v.provenance = "or";
    const Vec a = sigmoid_scores(e_i, emb, candidates);
    const Vec b = sigmoid_scores(e_j, emb, candidates);
    v.scores.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) v.scores[i] = a[i] + b[i];
    return v;
}

EntityScoreVector score_not(const Vec& e_i, const EmbeddingTable& emb,
                            const std::vector<std::string>& candidates) {
    check_dim(e_i, emb);
    EntityScoreVector v;
    v.ids = candidates;
    v.provenance = "not";
    const Vec a = sigmoid_scores(e_i, emb, candidates);
    v.scores.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) v.scores[i] = 1.0 - a[i];
    return v;
}

double precision_at_k(const EntityScoreVector& v, const std::set<std::string>& oracle,
                      std::size_t k) {
    if (oracle.empty()) throw EmptyOracleSet("no symbolic answers for this pair");
    std::vector<std::size_t> order(v.ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (v.scores[a] != v.scores[b]) return v.scores[a] > v.scores[b];
        return v.ids[a] < v.ids[b];
    });
    const std::size_t kk = std::min(k, v.ids.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < kk; ++i)
        if (oracle.count(v.ids[order[i]])) ++hits;
    const std::size_t denom = std::min(k, oracle.size());
    return 100.0 * static_cast<double>(hits) / static_cast<double>(denom);
}

namespace {

std::set<std::string> nonsentinel_tails(const KnowledgeGraph& kg, const std::string& head,
                                        const std::string& rel) {
    std::set<std::string> out;
    for (const auto& t : kg.tails(head, rel))
        if (!is_sentinel(kg.entity(t).etype)) out.insert(t);
    return out;
}

} // namespace

LogicReport run_logic_eval(const KnowledgeGraph& kg, const ModuleSet& modules,
                           const EmbeddingTable& emb, const std::set<std::string>& ops,
                           std::size_t k, bool type_filtered, std::size_t max_pairs) {
    for (const auto& op : ops)
        if (op != "not" && op != "and" && op != "or")
            throw BadConfig("unknown logic op '" + op + "'");
    LogicReport rep;
    rep.k = k;
    rep.type_filtered = type_filtered;
    const Schema& schema = kg.schema();
    for (const auto& rel_name : schema.relation_names()) {
        const RelationType& rel = schema.at(rel_name);
        const std::vector<std::string> candidates = logic_candidates(kg, rel, type_filtered);
        // heads with at least one non-sentinel tail, with their module outputs
        std::vector<std::pair<std::string, Vec>> heads;
        for (EntityType ht : rel.head_types()) {
            for (const auto& h : kg.entities_of(ht)) {
                if (nonsentinel_tails(kg, h, rel_name).empty()) continue;
                heads.emplace_back(
                    h, RelationModule::normalized(modules.at(rel_name).forward(emb.unit(h))));
            }
        }
        std::sort(heads.begin(), heads.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });

        auto& row = rep.table[rel_name];
        if (ops.count("not")) {
            LogicCell cell;
            double sum = 0.0;
            for (const auto& [h, e] : heads) {
                std::set<std::string> oracle;
                const auto tails = nonsentinel_tails(kg, h, rel_name);
                for (const auto& c : candidates)
                    if (!tails.count(c)) oracle.insert(c);
                try {
                    sum += precision_at_k(score_not(e, emb, candidates), oracle, k);
                    ++cell.evaluated;
                } catch (const EmptyOracleSet&) {
                    ++cell.skipped;
                }
            }
            if (cell.evaluated > 0) cell.mean_precision = sum / static_cast<double>(cell.evaluated);
            row["not"] = cell;
        }
        for (const char* op : {"and", "or"}) {
            if (!ops.count(op)) continue;
            LogicCell cell;
            double sum = 0.0;
            bool capped = false;
            for (std::size_t i = 0; i < heads.size() && !capped; ++i) {
                for (std::size_t j = i + 1; j < heads.size(); ++j) {
                    if (cell.evaluated + cell.skipped >= max_pairs) {
                        capped = true;
                        break;
                    }
                    const auto ti = nonsentinel_tails(kg, heads[i].first, rel_name);
                    const auto tj = nonsentinel_tails(kg, heads[j].first, rel_name);
                    std::set<std::string> oracle;
                    if (std::string(op) == "and") {
                        for (const auto& t : ti)
                            if (tj.count(t)) oracle.insert(t);
                    } else {
                        oracle = ti;
                        oracle.insert(tj.begin(), tj.end());
                    }
                    try {
                        const EntityScoreVector v =
                            std::string(op) == "and"
                                ? score_and(heads[i].second, heads[j].second, emb, candidates)
                                : score_or(heads[i].second, heads[j].second, emb, candidates);
                        sum += precision_at_k(v, oracle, k);
                        ++cell.evaluated;
                    } catch (const EmptyOracleSet&) {
                        ++cell.skipped;
                    }
                }
            }
            if (cell.evaluated > 0) cell.mean_precision = sum / static_cast<double>(cell.evaluated);
            row[op] = cell;
        }
    }
    return rep;
}

void save_logic_report(const std::string& path, const LogicReport& report, std::uint64_t seed) {
    ordered_json j;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["k"] = report.k;
    j["type_filtered"] = report.type_filtered;
    j["precision_denominator"] = "min(k, |oracle|)";
    ordered_json table = ordered_json::object();
    for (const auto& [rel, row] : report.table) {
        ordered_json jrow = ordered_json::object();
        for (const auto& [op, cell] : row) {
            ordered_json jc;
            jc["evaluated"] = cell.evaluated;
            jc["skipped"] = cell.skipped;
            if (cell.mean_precision)
                jc["precision_at_k"] = *cell.mean_precision;
            else
                jc["precision_at_k"] = nullptr; // skip marker: no valid pairs
            jrow[op] = jc;
        }
        table[rel] = jrow;
    }
    j["table"] = table;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

} // namespace kml
