#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kml/embedding.hpp"
#include "kml/kg.hpp"
#include "kml/relation_module.hpp"

namespace kml {

// Ground-truth hop operator a knowledge module approximates:
// F_r(x) = unit-normalized mean of the unit embeddings of
// tails(nearest-entity(x), r), with nearest-entity taken by cosine over the
// relation's head-type entities (lexicographic ties). Deterministic.
class IdealOperator {
public:
    IdealOperator(const KnowledgeGraph& kg, const EmbeddingTable& emb, std::string relation);

    const std::string& relation() const { return relation_; }
    // throws IdealUndefined when the head pool is empty or the projected
    // entity has no tails under the relation
    std::string project(const Vec& x) const;
    Vec apply(const Vec& x) const;
    bool defined_at(const Vec& x) const;

private:
    const KnowledgeGraph* kg_;
    const EmbeddingTable* emb_;
    std::string relation_;
    std::vector<std::string> pool_; // sorted head-type entity ids
};

struct EpsEstimate {
    double eps = 0.0;           // max over defined samples of |phi_hat(u) - F(u)|
    std::size_t defined = 0;    // samples where the ideal was defined
    std::size_t skipped = 0;    // samples where it was not
};

// Samples: every head-type entity embedding, n_random seeded unit vectors,
// plus optional extra states (e.g. states visited by executions). A sampled
// lower bound on the true sup. Throws NoDefinedSamples when no sample point
// has a defined ideal.
EpsEstimate estimate_eps(const RelationModule& m, const IdealOperator& ideal,
                         const KnowledgeGraph& kg, const EmbeddingTable& emb,
                         std::size_t n_random, std::uint64_t seed,
                         const std::vector<Vec>* extra = nullptr);

struct DeltaTrace {
    std::vector<double> deltas;      // delta_1..delta_T (delta_0 = 0 implicit)
    std::vector<Vec> learned_states; // z0, then normalized module outputs
    std::vector<Vec> ideal_states;   // z0, then ideal-operator outputs
};

// Runs the learned and ideal executions from the same start embedding.
// Throws IdealUndefined mid-path, MissingModule, DegenerateOutput.
DeltaTrace measure_delta(const std::vector<std::string>& program, const std::string& start_id,
                         const ModuleSet& modules, const KnowledgeGraph& kg,
                         const EmbeddingTable& emb);

// max over n sampled unit pairs of |phi(u) - phi(v)| / |u - v| (raw module)
double max_empirical_lipschitz(const RelationModule& m, std::size_t n_pairs, std::uint64_t seed);

struct TheoryConfig {
    std::size_t max_hops = 3;
    std::size_t n_random = 1000;       // random eps samples per relation
    std::uint64_t seed = 0;
    double factor = 3.0;               // effective one-step constant
    std::size_t resample_multiplier = 10;
};

struct BoundRecord {
    std::vector<std::string> program;
    std::string start;
    std::vector<double> eps;    // per hop
    std::vector<double> lips;   // per hop
    std::vector<double> deltas; // measured
    double bound = 0.0;
    double slack = 0.0; // bound - delta_T; >= 0 is the assertion target
};

struct SkipRecord {
    std::vector<std::string> program;
    std::string start; // empty when the whole program was skipped
    std::string reason;
};

struct TheoryReport {
    std::size_t max_hops = 3;
    std::size_t n_random = 1000;
    double factor = 3.0;
    bool resampled = false;
    std::size_t n_programs = 0;
    std::size_t n_executions = 0;
    std::size_t violations = 0;           // slack < 0 after any resampling
    std::size_t recursion_violations = 0; // delta_t > L_t delta_{t-1} + factor*eps_t
    double c_star = 0.0;                  // minimal constant making every bound tight
    std::map<std::string, double> eps_by_relation;
    std::map<std::string, double> lipschitz_by_relation;
    std::vector<BoundRecord> records;
    std::vector<SkipRecord> skipped;
};

// Verifies the composition bound delta_T <= sum_t (prod_{i>t} L_i) * factor *
// eps_t over every schema-chainable program of length <= max_hops, from every
// admissible start entity. Violations trigger one resampling escalation
// (resample_multiplier x random samples) before being reported.
TheoryReport check_bound(const KnowledgeGraph& kg, const ModuleSet& modules,
                         const EmbeddingTable& emb, const TheoryConfig& cfg);

void save_theory_report(const std::string& path, const TheoryReport& report,
                        std::uint64_t seed);

// Closed-form bounds under uniform Lipschitzness:
// L = 1 -> T*eps; otherwise eps*(L^T - 1)/(L - 1).
double corollary_bound(double L, double eps, std::size_t T);
// T -> infinity limit for L < 1: eps/(1 - L). Throws BadConfig for L >= 1.
double corollary_limit(double L, double eps);

struct CorollaryRow {
    std::size_t T = 0;
    double bound = 0.0;
};
std::vector<CorollaryRow> corollary_table(double L, double eps, std::size_t T_max);

} // namespace kml
