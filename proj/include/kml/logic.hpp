#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kml/embedding.hpp"
#include "kml/kg.hpp"
#include "kml/relation_module.hpp"

namespace kml {

// Sigmoid relatedness scores of candidate entities against one or two
// knowledge-module outputs. AND/NOT live in [0,1], OR in [0,2].
struct EntityScoreVector {
    std::vector<std::string> ids; // sorted candidate entity ids
    Vec scores;                   // parallel to ids
    std::string provenance;       // operator and operand description
};

// Candidate entities scores are computed over: the relation's non-sentinel
// tail-type entities (type_filtered), or every non-sentinel entity otherwise.
std::vector<std::string> logic_candidates(const KnowledgeGraph& kg, const RelationType& rel,
                                          bool type_filtered = true);

// soft intersection: sigma(E e_i') * sigma(E e_j') elementwise
EntityScoreVector score_and(const Vec& e_i, const Vec& e_j, const EmbeddingTable& emb,
                            const std::vector<std::string>& candidates);
// soft union: sigma(E e_i') + sigma(E e_j')
EntityScoreVector score_or(const Vec& e_i, const Vec& e_j, const EmbeddingTable& emb,
                           const std::vector<std::string>& candidates);
// soft complement: 1 - sigma(E e_i')
EntityScoreVector score_not(const Vec& e_i, const EmbeddingTable& emb,
                            const std::vector<std::string>& candidates);

// |top-k intersect oracle| / min(k, |oracle|) * 100, ranking ties broken by
// entity id. Throws EmptyOracleSet.
double precision_at_k(const EntityScoreVector& v, const std::set<std::string>& oracle,
                      std::size_t k = 10);

struct LogicCell {
    std::size_t evaluated = 0;
    std::size_t skipped = 0;               // pairs with an empty symbolic oracle
    std::optional<double> mean_precision;  // absent = skip marker (no valid pairs)
};

struct LogicReport {
    std::size_t k = 10;
    bool type_filtered = true;
    // relation -> operator ("not"/"and"/"or") -> cell
    std::map<std::string, std::map<std::string, LogicCell>> table;
};

// Evaluates every relation: NOT per head with tails, AND/OR per unordered
// head pair; oracles are symbolic complements/intersections/unions of
// non-sentinel tail sets. Pair count capped deterministically.
LogicReport run_logic_eval(const KnowledgeGraph& kg, const ModuleSet& modules,
                           const EmbeddingTable& emb, const std::set<std::string>& ops,
                           std::size_t k = 10, bool type_filtered = true,
                           std::size_t max_pairs = 2000);

void save_logic_report(const std::string& path, const LogicReport& report, std::uint64_t seed);

} // namespace kml
