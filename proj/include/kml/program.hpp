#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kml/embedding.hpp"
#include "kml/kg.hpp"
#include "kml/qa.hpp"
#include "kml/relation_module.hpp"

namespace kml {

enum class ProgramSource { Template, Enumerated, Imported };
const char* to_string(ProgramSource s);

// An executable chain of relation-module invocations. Always schema-chainable
// end to end and at least one hop long.
struct Program {
    std::vector<std::string> relations;
    ProgramSource source = ProgramSource::Template;
};

// Canonical program(s) for a template; the traversal-column program comes
// first, shorter alternatives follow (e.g. the direct tool-sharing route for
// the "which other task" templates). Throws UnknownTemplate; BadConfig when
// grounding_type disagrees with the template.
std::vector<Program> compile_programs(const std::string& tid, EntityType grounding_type,
                                      const Schema& schema);

// All relation-name sequences from `start` to `answer` of length <= max_hops,
// chained through admissible (head, tail) type pairs. May be empty.
std::vector<Program> enumerate_programs(EntityType start, EntityType answer,
                                        const Schema& schema, std::size_t max_hops = 3);

// Imported programs: a JSON list of relation-name lists. Validates every name
// against the schema and chainability end to end.
std::vector<Program> load_programs_json(const std::string& path, const Schema& schema);

// Score-weighted combination of category embeddings, unit-normalized.
// Throws UnknownCategory / BadConfig (no categories, negative score) /
// DegenerateOutput (weighted sum collapses).
Vec ground(const std::vector<std::pair<std::string, double>>& scores,
           const EmbeddingTable& emb);
Vec ground(const Grounding& g, const EmbeddingTable& emb); // one-hot when scores empty

struct TraceHop {
    std::string relation;
    Vec state; // unit-normalized module output
    // top-k candidate entities of the hop's tail type with softmax scores
    std::vector<std::pair<std::string, double>> topk;
};

struct ExecutionTrace {
    std::vector<TraceHop> hops;
    Vec z_final;
};

// Runs the program from a unit grounding vector. Pure in (program, z0,
// modules, embeddings); the graph only supplies the per-hop candidate entity
// sets. Throws MissingModule / DegenerateOutput / NonUnitInput.
ExecutionTrace execute(const Program& p, const Vec& z0, const ModuleSet& modules,
                       const EmbeddingTable& emb, const KnowledgeGraph& kg,
                       std::size_t topk = 5);

// Option scoring: softmax over cosine(z_f, embedding of each option label).
// Labels resolving to answer-type entities use the entity table; the rest use
// the sidecar. Throws MissingOptionEmbedding / MixedOptionSources.
std::array<double, 5> option_scores(const Vec& z_f, const std::array<std::string, 5>& options,
                                    const KnowledgeGraph& kg, EntityType answer_type,
                                    const EmbeddingTable& emb,
                                    const EmbeddingTable* sidecar = nullptr);

struct AnswerResult {
    std::array<double, 5> scores{};
    int index = 0;
};

// Elementwise max (or mean) over per-program softmax score vectors, then
// argmax with ties to the lowest index. Throws NoProgramAvailable on empty.
AnswerResult answer(const std::vector<std::array<double, 5>>& per_program,
                    bool mean_aggregate = false);

struct IgpResult {
    std::array<double, 5> scores{};
    int index = 0;
    bool empty_reach = false; // no grounded mass arrived at any option
};

// Symbolic baseline: pushes grounding scores breadth-first along the program's
// relations, summing arriving mass per entity; options score by accumulated
// mass. Throws IncompatiblePath when the program cannot start at the
// grounding type.
IgpResult igp_answer(const Grounding& g, const Program& p, const KnowledgeGraph& kg,
                     const std::array<std::string, 5>& options, EntityType answer_type);

IgpResult igp_answer(const Grounding& g, const std::vector<Program>& programs,
                     const KnowledgeGraph& kg, const std::array<std::string, 5>& options,
                     EntityType answer_type);

enum class EvalMethod { Kml, Igp };
const char* to_string(EvalMethod m);
EvalMethod eval_method_from_string(const std::string& s);

struct EvalReport {
    std::string method;
    std::size_t n = 0;
    double accuracy = 0.0;               // fraction correct overall
    double mean_template_accuracy = 0.0; // equal-weight mean over templates
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_template; // tid -> {correct, total}
    std::vector<int> predictions;
};

// Answers every instance with the template's canonical programs.
EvalReport eval_qa(const std::vector<QAInstance>& instances, const KnowledgeGraph& kg,
                   const ModuleSet& modules, const EmbeddingTable& emb, EvalMethod method,
                   const EmbeddingTable* sidecar = nullptr, bool mean_aggregate = false);

void save_eval_report(const std::string& path, const EvalReport& report, std::uint64_t seed);

} // namespace kml
