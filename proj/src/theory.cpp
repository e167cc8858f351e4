#include "kml/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "kml/rng.hpp"
#include "kml/spectral.hpp"
#include "kml/version.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

IdealOperator::IdealOperator(const KnowledgeGraph& kg, const EmbeddingTable& emb,
                             std::string relation)
    : kg_(&kg), emb_(&emb), relation_(std::move(relation)) {
    const RelationType& rel = kg.schema().at(relation_);
    for (EntityType t : rel.head_types()) {
        auto ids = kg.entities_of(t);
        pool_.insert(pool_.end(), ids.begin(), ids.end());
    }
    std::sort(pool_.begin(), pool_.end());
}

std::string IdealOperator::project(const Vec& x) const {
    if (pool_.empty()) throw IdealUndefined(relation_ + ": no head-type entities");
    std::string best;
    double best_cos = 0.0;
    for (const auto& id : pool_) {
        const double c = dot(x, emb_->unit(id));
        if (best.empty() || c > best_cos) {
            best = id;
            best_cos = c;
        }
    }
    return best;
}

Vec IdealOperator::apply(const Vec& x) const {
    const std::string nearest = project(x);
    const auto& tails = kg_->tails(nearest, relation_);
    if (tails.empty())
        throw IdealUndefined(relation_ + ": '" + nearest + "' has no tails");
    Vec mean(emb_->dim(), 0.0);
    for (const auto& t : tails) axpy(1.0, emb_->unit(t), mean);
    scale(mean, 1.0 / static_cast<double>(tails.size()));
    return normalized(mean);
}

bool IdealOperator::defined_at(const Vec& x) const {
    if (pool_.empty()) return false;
    return !kg_->tails(project(x), relation_).empty();
}

namespace {

Vec random_unit(Rng& rng, std::size_t dim) {
    Vec v(dim);
    for (auto& x : v) x = rng.gaussian();
    return normalized(v);
}

} // namespace

EpsEstimate estimate_eps(const RelationModule& m, const IdealOperator& ideal,
                         const KnowledgeGraph& kg, const EmbeddingTable& emb,
                         std::size_t n_random, std::uint64_t seed,
                         const std::vector<Vec>* extra) {
    const RelationType& rel = kg.schema().at(ideal.relation());
    std::vector<std::string> pool;
    for (EntityType t : rel.head_types()) {
        auto ids = kg.entities_of(t);
        pool.insert(pool.end(), ids.begin(), ids.end());
    }
    std::sort(pool.begin(), pool.end());

    EpsEstimate est;
    auto consider = [&](const Vec& u) {
        if (!ideal.defined_at(u)) {
            ++est.skipped;
            return;
        }
        Vec d = RelationModule::normalized(m.forward(u));
        axpy(-1.0, ideal.apply(u), d);
        est.eps = std::max(est.eps, norm2(d));
        ++est.defined;
    };
    for (const auto& id : pool) consider(emb.unit(id));
    Rng rng(seed);
    for (std::size_t i = 0; i < n_random; ++i) consider(random_unit(rng, emb.dim()));
    if (extra)
        for (const auto& u : *extra) consider(u);
    if (est.defined == 0)
        throw NoDefinedSamples(ideal.relation() + ": ideal undefined on every sample");
    return est;
}

DeltaTrace measure_delta(const std::vector<std::string>& program, const std::string& start_id,
                         const ModuleSet& modules, const KnowledgeGraph& kg,
                         const EmbeddingTable& emb) {
    if (program.empty()) throw NoProgramAvailable("empty program");
    DeltaTrace tr;
    Vec learned = emb.unit(start_id);
    Vec ideal_state = learned;
    tr.learned_states.push_back(learned);
    tr.ideal_states.push_back(ideal_state);
    for (const auto& rel : program) {
        const IdealOperator ideal(kg, emb, rel);
        ideal_state = ideal.apply(ideal_state);
        learned = RelationModule::normalized(modules.at(rel).forward(learned));
        Vec d = learned;
        axpy(-1.0, ideal_state, d);
        tr.deltas.push_back(norm2(d));
        tr.learned_states.push_back(learned);
        tr.ideal_states.push_back(ideal_state);
    }
    return tr;
}

double max_empirical_lipschitz(const RelationModule& m, std::size_t n_pairs,
                               std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const Vec u = random_unit(rng, m.d_in);
        const Vec v = random_unit(rng, m.d_in);
        Vec du = u;
        axpy(-1.0, v, du);
        const double dn = norm2(du);
        if (dn < 1e-12) continue;
        Vec dz = m.forward(u);
        axpy(-1.0, m.forward(v), dz);
        worst = std::max(worst, norm2(dz) / dn);
    }
    return worst;
}

namespace {

// all relation-name sequences of length <= max_hops whose admissible type
// sets stay non-empty, in lexicographic DFS order
std::vector<std::vector<std::string>> chainable_programs(const Schema& schema,
                                                         std::size_t max_hops) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> chain;
    auto tails_of = [&](const std::set<EntityType>& cur, const RelationType& rel) {
        std::set<EntityType> next;
        for (EntityType t : rel.tail_types())
            for (EntityType h : cur)
                if (rel.admits(h, t)) next.insert(t);
        return next;
    };
    auto dfs = [&](auto&& self, const std::set<EntityType>& cur) -> void {
        if (chain.size() == max_hops) return;
        for (const auto& name : schema.relation_names()) {
            std::set<EntityType> next = tails_of(cur, schema.at(name));
            if (next.empty()) continue;
            chain.push_back(name);
            out.push_back(chain);
            self(self, next);
            chain.pop_back();
        }
    };
    // the first hop may start from any admissible head type
    std::set<EntityType> all_types;
    for (const auto& name : schema.relation_names()) {
        const auto heads = schema.at(name).head_types();
        all_types.insert(heads.begin(), heads.end());
    }
    dfs(dfs, all_types);
    return out;
}

struct Execution {
    std::size_t program_idx = 0;
    std::string start;
    std::vector<double> deltas;
};

} // namespace

TheoryReport check_bound(const KnowledgeGraph& kg, const ModuleSet& modules,
                         const EmbeddingTable& emb, const TheoryConfig& cfg) {
    const Schema& schema = kg.schema();
    TheoryReport rep;
    rep.max_hops = cfg.max_hops;
    rep.n_random = cfg.n_random;
    rep.factor = cfg.factor;

    const auto programs = chainable_programs(schema, cfg.max_hops);
    rep.n_programs = programs.size();

    // per-relation artifacts
    std::map<std::string, IdealOperator> ideals;
    std::map<std::string, double> lips;
    std::set<std::string> used;
    for (const auto& p : programs)
        for (const auto& r : p) used.insert(r);
    for (const auto& r : used) {
        ideals.emplace(r, IdealOperator(kg, emb, r));
        lips[r] = lipschitz_upper_bound(modules.at(r));
    }

    // pass 1: executions; fold visited pre-states into a running eps max
    std::map<std::string, double> visited_max;
    std::vector<Execution> executions;
    for (std::size_t pi = 0; pi < programs.size(); ++pi) {
        const auto& prog = programs[pi];
        const RelationType& first = schema.at(prog.front());
        std::vector<std::string> starts;
        for (EntityType t : first.head_types()) {
            auto ids = kg.entities_of(t);
            starts.insert(starts.end(), ids.begin(), ids.end());
        }
        std::sort(starts.begin(), starts.end());
        for (const auto& start : starts) {
            Execution ex;
            ex.program_idx = pi;
            ex.start = start;
            Vec learned = emb.unit(start);
            Vec ideal_state = learned;
            bool ok = true;
            for (std::size_t t = 0; t < prog.size() && ok; ++t) {
                const auto& rel = prog[t];
                const IdealOperator& ideal = ideals.at(rel);
                const RelationModule& m = modules.at(rel);
                try {
                    Vec next_ideal = ideal.apply(ideal_state); // throws IdealUndefined
                    Vec next_learned = RelationModule::normalized(m.forward(learned));
                    // eps folding at both pre-states, where defined
                    if (ideal.defined_at(learned)) {
                        Vec d = next_learned;
                        axpy(-1.0, ideal.apply(learned), d);
                        auto& vm = visited_max[rel];
                        vm = std::max(vm, norm2(d));
                    }
                    {
                        Vec d = RelationModule::normalized(m.forward(ideal_state));
                        axpy(-1.0, next_ideal, d);
                        auto& vm = visited_max[rel];
                        vm = std::max(vm, norm2(d));
                    }
                    ideal_state = std::move(next_ideal);
                    learned = std::move(next_learned);
                    Vec d = learned;
                    axpy(-1.0, ideal_state, d);
                    ex.deltas.push_back(norm2(d));
                } catch (const IdealUndefined& e) {
                    rep.skipped.push_back({prog, start, e.what()});
                    ok = false;
                } catch (const DegenerateOutput& e) {
                    rep.skipped.push_back({prog, start, std::string("degenerate: ") + e.what()});
                    ok = false;
                }
            }
            if (ok) executions.push_back(std::move(ex));
        }
    }

    // pass 2: sampled eps per relation actually used by kept executions
    std::set<std::string> exec_rels;
    for (const auto& ex : executions)
        for (const auto& r : programs[ex.program_idx]) exec_rels.insert(r);
    std::map<std::string, double> eps;
    std::set<std::string> undefined_rels;
    for (const auto& r : exec_rels) {
        try {
            const EpsEstimate est = estimate_eps(modules.at(r), ideals.at(r), kg, emb,
                                                 cfg.n_random, child_seed(cfg.seed, "eps/" + r));
            eps[r] = std::max(est.eps, visited_max.count(r) ? visited_max.at(r) : 0.0);
        } catch (const NoDefinedSamples&) {
            undefined_rels.insert(r);
        }
    }
    // executions through an undefined relation cannot be bounded
    {
        std::vector<Execution> kept;
        for (auto& ex : executions) {
            const auto& prog = programs[ex.program_idx];
            bool bad = false;
            for (const auto& r : prog)
                if (undefined_rels.count(r)) bad = true;
            if (bad)
                rep.skipped.push_back({prog, ex.start, "no defined samples for a hop relation"});
            else
                kept.push_back(std::move(ex));
        }
        executions = std::move(kept);
    }

    const double tol = 1e-12;
    auto build_records = [&]() {
        rep.records.clear();
        rep.violations = 0;
        rep.recursion_violations = 0;
        double c_star = 0.0;
        for (const auto& ex : executions) {
            const auto& prog = programs[ex.program_idx];
            BoundRecord rec;
            rec.program = prog;
            rec.start = ex.start;
            rec.deltas = ex.deltas;
            double bound = 0.0, unit_bound = 0.0;
            for (std::size_t t = 0; t < prog.size(); ++t) {
                const double e = eps.at(prog[t]);
                double prod = 1.0;
                for (std::size_t i = t + 1; i < prog.size(); ++i) prod *= lips.at(prog[i]);
                bound += prod * cfg.factor * e;
                unit_bound += prod * e;
                rec.eps.push_back(e);
                rec.lips.push_back(lips.at(prog[t]));
            }
            rec.bound = bound;
            rec.slack = bound - ex.deltas.back();
            if (rec.slack < -tol * std::max(1.0, bound)) ++rep.violations;
            double prev = 0.0;
            for (std::size_t t = 0; t < prog.size(); ++t) {
                const double rhs = lips.at(prog[t]) * prev + cfg.factor * eps.at(prog[t]);
                if (ex.deltas[t] > rhs + tol * std::max(1.0, rhs)) ++rep.recursion_violations;
                prev = ex.deltas[t];
            }
            if (unit_bound > 0.0) c_star = std::max(c_star, ex.deltas.back() / unit_bound);
            rep.records.push_back(std::move(rec));
        }
        rep.c_star = c_star;
    };
    build_records();

    if (rep.violations > 0 || rep.recursion_violations > 0) {
        // escalation: denser sampling can only raise the eps lower bounds
        rep.resampled = true;
        for (const auto& r : exec_rels) {
            if (undefined_rels.count(r)) continue;
            const EpsEstimate est =
                estimate_eps(modules.at(r), ideals.at(r), kg, emb,
                             cfg.n_random * cfg.resample_multiplier,
                             child_seed(cfg.seed, "eps-resample/" + r));
            eps[r] = std::max(eps[r], est.eps);
        }
        build_records();
    }

    rep.n_executions = executions.size();
    rep.eps_by_relation = eps;
    for (const auto& r : exec_rels)
        if (!undefined_rels.count(r)) rep.lipschitz_by_relation[r] = lips.at(r);
    return rep;
}

void save_theory_report(const std::string& path, const TheoryReport& report,
                        std::uint64_t seed) {
    ordered_json j;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["max_hops"] = report.max_hops;
    j["n_random"] = report.n_random;
    j["factor"] = report.factor;
    j["resampled"] = report.resampled;
    j["n_programs"] = report.n_programs;
    j["n_executions"] = report.n_executions;
    j["n_skipped"] = report.skipped.size();
    j["violations"] = report.violations;
    j["recursion_violations"] = report.recursion_violations;
    j["c_star"] = report.c_star;
    j["eps_by_relation"] = report.eps_by_relation;
    j["lipschitz_by_relation"] = report.lipschitz_by_relation;

    // plot-ready slack histogram
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& r : report.records) {
        lo = first ? r.slack : std::min(lo, r.slack);
        hi = first ? r.slack : std::max(hi, r.slack);
        first = false;
    }
    const std::size_t n_bins = 20;
    std::vector<double> edges;
    std::vector<std::size_t> counts(n_bins, 0);
    if (!first) {
        const double width = (hi - lo) > 0 ? (hi - lo) / static_cast<double>(n_bins) : 1.0;
        for (std::size_t b = 0; b <= n_bins; ++b)
            edges.push_back(lo + width * static_cast<double>(b));
        for (const auto& r : report.records) {
            auto b = static_cast<std::size_t>((r.slack - lo) / width);
            if (b >= n_bins) b = n_bins - 1;
            ++counts[b];
        }
    }
    ordered_json hist;
    hist["bin_edges"] = edges;
    hist["counts"] = counts;
    j["slack_histogram"] = hist;

    ordered_json recs = ordered_json::array();
    for (const auto& r : report.records) {
        ordered_json jr;
        jr["program"] = r.program;
        jr["start"] = r.start;
        jr["eps"] = r.eps;
        jr["lipschitz"] = r.lips;
        jr["deltas"] = r.deltas;
        jr["bound"] = r.bound;
        jr["slack"] = r.slack;
        recs.push_back(std::move(jr));
    }
    j["records"] = recs;
    ordered_json skips = ordered_json::array();
    for (const auto& s : report.skipped) {
        ordered_json js;
        js["program"] = s.program;
        js["start"] = s.start;
        js["reason"] = s.reason;
        skips.push_back(std::move(js));
    }
    j["skipped"] = skips;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

double corollary_bound(double L, double eps, std::size_t T) {
    if (L < 0.0 || eps < 0.0) throw BadConfig("corollary needs L >= 0 and eps >= 0");
    const double t = static_cast<double>(T);
    if (L == 1.0) return t * eps;
    return eps * (std::pow(L, t) - 1.0) / (L - 1.0);
}

double corollary_limit(double L, double eps) {
    if (L < 0.0 || eps < 0.0) throw BadConfig("corollary needs L >= 0 and eps >= 0");
    if (L >= 1.0) throw BadConfig("limit bound requires L < 1");
    return eps / (1.0 - L);
}

std::vector<CorollaryRow> corollary_table(double L, double eps, std::size_t T_max) {
    std::vector<CorollaryRow> rows;
    for (std::size_t T = 1; T <= T_max; ++T) rows.push_back({T, corollary_bound(L, eps, T)});
    return rows;
}

} // namespace kml
