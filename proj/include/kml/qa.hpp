#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kml/kg.hpp"

namespace kml {

// One hop of an oracle query. `freq_max` keeps only the most frequent
// non-sentinel tail per head; `optional_hop` unions the image with its input
// (reflexive closure, used for the similar-purpose disjunction); a non-empty
// `require_nonempty` drops tails that have no edge under that relation.
struct OracleHop {
    std::string rel;
    bool freq_max = false;
    bool optional_hop = false;
    std::string require_nonempty;
};

// Final frequency selection against an anchor entity: FromHead keeps the
// frontier entity with the most frequent (anchor -> entity) edge, ToTail the
// one with the most frequent (entity -> anchor) edge.
struct FreqSelect {
    enum class Mode { None, FromHead, ToTail };
    Mode mode = Mode::None;
    std::string anchor;
    std::string rel;
};

// Structured, self-contained symbolic query: the single source of truth for
// what counts as a correct answer. Both the QA generator and validate() go
// through eval_oracle_query, and for unconstrained templates it degenerates
// to KnowledgeGraph::traverse.
struct OracleQuery {
    std::string start;
    std::vector<OracleHop> hops;
    std::set<std::string> exclude; // subtracted from the final image
    FreqSelect freq_select;
};

// Evaluates the query; sentinels never appear in the result.
std::set<std::string> eval_oracle_query(const KnowledgeGraph& kg, const OracleQuery& q);

struct QaTemplate {
    std::string tid; // "Q1".."Q17"
    EntityType grounding_type;
    EntityType answer_type;
    std::string question;     // canonical phrasing, ships built-in
    std::string display_path; // human-readable traversal sketch
};

const std::vector<QaTemplate>& all_templates();
const QaTemplate& template_by_id(const std::string& tid); // throws UnknownTemplate

// oracle query for a concrete grounding of the template
OracleQuery build_oracle_query(const std::string& tid, const KnowledgeGraph& kg,
                               const std::string& grounding_id);

// Perception stand-in: the entity the question is about, plus an optional
// score vector over confusable entities (one-hot when empty).
struct Grounding {
    EntityType etype = EntityType::Step;
    std::string entity_id;
    std::vector<std::pair<std::string, double>> scores;
};

struct QAInstance {
    std::string tid;
    Grounding grounding;
    std::string question;
    std::array<std::string, 5> options; // entity names of the answer type
    int correct_index = -1;
    OracleQuery oracle_query;
};

struct QaGenConfig {
    std::uint64_t seed = 0;
    std::size_t count = 10;
    double grounding_noise = 0.0; // mass moved off the true entity
    int grounding_topk = 1;       // entities per grounding score vector
};

// Samples `cfg.count` instances, cycling over realizable groundings in
// seeded order. Balanced options: the correct label is the least-used member
// of the oracle set; distractors are drawn inverse-frequency by appearance.
// Throws NoRealizableGrounding / InsufficientVocabulary.
std::vector<QAInstance> instantiate(const QaTemplate& t, const KnowledgeGraph& kg,
                                    const QaGenConfig& cfg);
std::vector<QAInstance> instantiate(const QaTemplate& t, const KnowledgeGraph& kg,
                                    std::uint64_t seed, std::size_t count);

// true iff the instance is well-formed and its oracle query yields exactly
// the option at correct_index among the five
bool validate(const QAInstance& inst, const KnowledgeGraph& kg);

// entity id of an option label, resolved within the answer type
std::optional<std::string> resolve_option(const KnowledgeGraph& kg, EntityType answer_type,
                                          const std::string& label);

// max over answer-type labels of smoothed option-appearance counts,
// (max_n + 1) / (min_n + 1); the balanced sampler keeps this near 1
double label_imbalance(const std::vector<QAInstance>& instances, const KnowledgeGraph& kg);

// JSON Lines round-trip
void save_qa_jsonl(const std::string& path, const std::vector<QAInstance>& instances);
std::vector<QAInstance> load_qa_jsonl(const std::string& path);

} // namespace kml
