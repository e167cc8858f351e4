#include "kml/program.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "kml/version.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ProgramSource s) {
    switch (s) {
    case ProgramSource::Template: return "template";
    case ProgramSource::Enumerated: return "enumerated";
    case ProgramSource::Imported: return "imported";
    }
    return "?";
}

namespace {

// admissible tail types reachable from `cur` through `rel`
std::set<EntityType> step_types(const std::set<EntityType>& cur, const RelationType& rel) {
    std::set<EntityType> out;
    for (EntityType t : rel.tail_types())
        for (EntityType h : cur)
            if (rel.admits(h, t)) out.insert(t);
    return out;
}

bool chain_reaches(const Schema& schema, EntityType start,
                   const std::vector<std::string>& relations,
                   EntityType* final_contains = nullptr) {
    std::set<EntityType> cur{start};
    for (const auto& name : relations) {
        cur = step_types(cur, schema.at(name));
        if (cur.empty()) return false;
    }
    return final_contains == nullptr || cur.count(*final_contains) > 0;
}

} // namespace

std::vector<Program> compile_programs(const std::string& tid, EntityType grounding_type,
                                      const Schema& schema) {
    const QaTemplate& t = template_by_id(tid);
    if (grounding_type != t.grounding_type)
        throw BadConfig(tid + " grounds on " + std::string(to_string(t.grounding_type)) +
                        ", not " + std::string(to_string(grounding_type)));
    static const std::map<std::string, std::vector<std::vector<std::string>>> table = {
        {"Q1", {{"HAS_TOOL"}}},
        {"Q2", {{"HAS_NEXT_STEP"}}},
        {"Q3", {{"HAS_NEXT_STEP"}}},
        {"Q4", {{"HAS_PREVIOUS_STEP"}}},
        {"Q5", {{"HAS_PREVIOUS_STEP"}}},
        {"Q6", {{"HAS_NEXT_STEP", "HAS_TOOL"}}},
        {"Q7", {{"HAS_STEP"}}},
        {"Q8", {{"HAS_STEP"}}},
        {"Q9", {{"IN_DOMAIN"}}},
        {"Q10", {{"HAS_TOOL", "HAS_PURPOSE"}}},
        {"Q11", {{"HAS_ACTION", "ACTION_HAS_PURPOSE"}}},
        {"Q12", {{"HAS_OBJECT", "OBJECT_HAS_PURPOSE"}}},
        {"Q13", {{"HAS_TOOL", "HAS_PURPOSE"}}},
        {"Q14", {{"HAS_OBJECT", "OBJECT_HAS_PURPOSE"}}},
        {"Q15",
         {{"HAS_TOOL", "HAS_PURPOSE", "HAS_SIMILAR_PURPOSE", "PURPOSE_TO_TOOL"},
          {"HAS_TOOL", "HAS_PURPOSE", "PURPOSE_TO_TOOL"}}},
        {"Q16",
         {{"HAS_TOOL", "HAS_PURPOSE", "PURPOSE_TO_TOOL", "TOOL_TO_STEP", "IN_TASK"},
          {"HAS_TOOL", "TOOL_TO_STEP", "IN_TASK"}}},
        {"Q17",
         {{"HAS_OBJECT", "OBJECT_HAS_PURPOSE", "PURPOSE_TO_OBJECT", "OBJECT_IN_STEP", "IN_TASK"},
          {"HAS_OBJECT", "OBJECT_IN_STEP", "IN_TASK"}}},
    };
    std::vector<Program> out;
    EntityType answer = t.answer_type;
    for (const auto& rels : table.at(tid)) {
        if (!chain_reaches(schema, t.grounding_type, rels, &answer))
            throw BadConfig(tid + ": canonical program is not schema-chainable");
        out.push_back({rels, ProgramSource::Template});
    }
    return out;
}

std::vector<Program> enumerate_programs(EntityType start, EntityType answer,
                                        const Schema& schema, std::size_t max_hops) {
    std::vector<Program> out;
    std::vector<std::string> chain;
    auto dfs = [&](auto&& self, const std::set<EntityType>& cur) -> void {
        if (chain.size() >= 1 && cur.count(answer))
            out.push_back({chain, ProgramSource::Enumerated});
        if (chain.size() == max_hops) return;
        for (const auto& name : schema.relation_names()) {
            std::set<EntityType> next = step_types(cur, schema.at(name));
            if (next.empty()) continue;
            chain.push_back(name);
            self(self, next);
            chain.pop_back();
        }
    };
    if (max_hops > 0) dfs(dfs, {start});
    return out;
}

std::vector<Program> load_programs_json(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("'" + path + "': " + e.what());
    }
    if (!j.is_array()) throw BadConfig("'" + path + "': expected a list of relation-name lists");
    std::vector<Program> out;
    for (const auto& jp : j) {
        if (!jp.is_array() || jp.empty())
            throw BadConfig("'" + path + "': each program is a non-empty relation list");
        std::vector<std::string> rels;
        for (const auto& r : jp) rels.push_back(r.get<std::string>());
        for (const auto& r : rels) schema.at(r); // throws UnknownRelation
        for (std::size_t i = 0; i + 1 < rels.size(); ++i)
            if (!schema.chainable(rels[i], rels[i + 1]))
                throw IncompatiblePath(rels[i] + " -> " + rels[i + 1] + " in '" + path + "'");
        out.push_back({std::move(rels), ProgramSource::Imported});
    }
    return out;
}

Vec ground(const std::vector<std::pair<std::string, double>>& scores,
           const EmbeddingTable& emb) {
    if (scores.empty()) throw BadConfig("grounding needs at least one category");
    Vec z(emb.dim(), 0.0);
    for (const auto& [id, w] : scores) {
        if (w < 0.0) throw BadConfig("negative grounding score for '" + id + "'");
        axpy(w, emb.unit(id), z);
    }
    return normalized(z);
}

Vec ground(const Grounding& g, const EmbeddingTable& emb) {
    if (g.scores.empty()) return ground({{g.entity_id, 1.0}}, emb);
    return ground(g.scores, emb);
}

ExecutionTrace execute(const Program& p, const Vec& z0, const ModuleSet& modules,
                       const EmbeddingTable& emb, const KnowledgeGraph& kg,
                       std::size_t topk) {
    if (p.relations.empty()) throw NoProgramAvailable("empty program");
    ExecutionTrace trace;
    Vec state = z0;
    for (const auto& rel_name : p.relations) {
        const RelationModule& m = modules.at(rel_name);
        state = RelationModule::normalized(m.forward(state));

        // interpret the state against entities of the hop's tail type
        const RelationType& rel = kg.schema().at(rel_name);
        std::vector<std::string> candidates;
        for (EntityType t : rel.tail_types()) {
            auto ids = kg.entities_of(t);
            candidates.insert(candidates.end(), ids.begin(), ids.end());
        }
        std::sort(candidates.begin(), candidates.end());
        std::vector<double> cos(candidates.size());
        double cmax = -2.0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            cos[i] = dot(state, emb.unit(candidates[i]));
            cmax = std::max(cmax, cos[i]);
        }
        double denom = 0.0;
        for (double c : cos) denom += std::exp(c - cmax);
        TraceHop hop;
        hop.relation = rel_name;
        hop.state = state;
        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (cos[a] != cos[b]) return cos[a] > cos[b];
            return candidates[a] < candidates[b];
        });
        const std::size_t k = std::min(topk, candidates.size());
        for (std::size_t i = 0; i < k; ++i)
            hop.topk.emplace_back(candidates[order[i]],
                                  std::exp(cos[order[i]] - cmax) / denom);
        trace.hops.push_back(std::move(hop));
    }
    trace.z_final = std::move(state);
    return trace;
}

std::array<double, 5> option_scores(const Vec& z_f, const std::array<std::string, 5>& options,
                                    const KnowledgeGraph& kg, EntityType answer_type,
                                    const EmbeddingTable& emb, const EmbeddingTable* sidecar) {
    std::array<Vec, 5> vecs;
    bool any_entity = false, any_sidecar = false;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto id = resolve_option(kg, answer_type, options[i]);
        if (id && emb.has(*id)) {
            vecs[i] = emb.unit(*id);
            any_entity = true;
        } else if (sidecar && sidecar->has(options[i])) {
            vecs[i] = sidecar->unit(options[i]);
            any_sidecar = true;
        } else {
            throw MissingOptionEmbedding("'" + options[i] + "'");
        }
    }
    if (any_entity && any_sidecar)
        throw MixedOptionSources("options mix entity and sidecar embeddings");
    const double zn = norm2(z_f);
    if (zn < 1e-12) throw DegenerateOutput("zero final state");
    std::array<double, 5> cos{};
    double cmax = -2.0;
    for (std::size_t i = 0; i < 5; ++i) {
        cos[i] = dot(z_f, vecs[i]) / zn;
        cmax = std::max(cmax, cos[i]);
    }
    double denom = 0.0;
    for (double c : cos) denom += std::exp(c - cmax);
    std::array<double, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = std::exp(cos[i] - cmax) / denom;
    return out;
}

AnswerResult answer(const std::vector<std::array<double, 5>>& per_program,
                    bool mean_aggregate) {
    if (per_program.empty()) throw NoProgramAvailable("no per-program scores");
    AnswerResult res;
    for (std::size_t i = 0; i < 5; ++i) {
        double v = mean_aggregate ? 0.0 : -1.0;
        for (const auto& s : per_program)
            v = mean_aggregate ? v + s[i] : std::max(v, s[i]);
        if (mean_aggregate) v /= static_cast<double>(per_program.size());
        res.scores[i] = v;
    }
    res.index = 0;
    for (int i = 1; i < 5; ++i)
        if (res.scores[static_cast<std::size_t>(i)] >
            res.scores[static_cast<std::size_t>(res.index)])
            res.index = i;
    return res;
}

IgpResult igp_answer(const Grounding& g, const Program& p, const KnowledgeGraph& kg,
                     const std::array<std::string, 5>& options, EntityType answer_type) {
    if (p.relations.empty()) throw NoProgramAvailable("empty program");
    if (!chain_reaches(kg.schema(), g.etype, p.relations))
        throw IncompatiblePath("program cannot start at " + std::string(to_string(g.etype)));
    std::map<std::string, double> mass;
    if (g.scores.empty()) {
        kg.entity(g.entity_id);
        mass[g.entity_id] = 1.0;
    } else {
        for (const auto& [id, w] : g.scores) {
            kg.entity(id);
            mass[id] += w;
        }
    }
    for (const auto& rel : p.relations) {
        std::map<std::string, double> next;
        for (const auto& [id, m] : mass)
            for (const auto& t : kg.tails(id, rel)) next[t] += m;
        mass = std::move(next);
    }
    IgpResult res;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto id = resolve_option(kg, answer_type, options[i]);
        if (!id) continue;
        auto it = mass.find(*id);
        if (it != mass.end()) res.scores[i] = it->second;
    }
    res.empty_reach = true;
    for (double s : res.scores)
        if (s != 0.0) res.empty_reach = false;
    res.index = 0;
    for (int i = 1; i < 5; ++i)
        if (res.scores[static_cast<std::size_t>(i)] >
            res.scores[static_cast<std::size_t>(res.index)])
            res.index = i;
    return res;
}

IgpResult igp_answer(const Grounding& g, const std::vector<Program>& programs,
                     const KnowledgeGraph& kg, const std::array<std::string, 5>& options,
                     EntityType answer_type) {
    if (programs.empty()) throw NoProgramAvailable("no programs");
    IgpResult res;
    bool first = true;
    for (const auto& p : programs) {
        IgpResult r = igp_answer(g, p, kg, options, answer_type);
        if (first) {
            res = r;
            first = false;
            continue;
        }
        for (std::size_t i = 0; i < 5; ++i) res.scores[i] = std::max(res.scores[i], r.scores[i]);
        res.empty_reach = res.empty_reach && r.empty_reach;
    }
    res.index = 0;
    for (int i = 1; i < 5; ++i)
        if (res.scores[static_cast<std::size_t>(i)] >
            res.scores[static_cast<std::size_t>(res.index)])
            res.index = i;
    return res;
}

const char* to_string(EvalMethod m) { return m == EvalMethod::Kml ? "kml" : "igp"; }

EvalMethod eval_method_from_string(const std::string& s) {
    if (s == "kml") return EvalMethod::Kml;
    if (s == "igp") return EvalMethod::Igp;
    throw BadConfig("unknown method '" + s + "' (kml|igp)");
}

EvalReport eval_qa(const std::vector<QAInstance>& instances, const KnowledgeGraph& kg,
                   const ModuleSet& modules, const EmbeddingTable& emb, EvalMethod method,
                   const EmbeddingTable* sidecar, bool mean_aggregate) {
    EvalReport rep;
    rep.method = to_string(method);
    for (const auto& inst : instances) {
        const QaTemplate& t = template_by_id(inst.tid);
        const std::vector<Program> programs =
            compile_programs(inst.tid, t.grounding_type, kg.schema());
        int pred = 0;
        if (method == EvalMethod::Kml) {
            const Vec z0 = ground(inst.grounding, emb);
            std::vector<std::array<double, 5>> scores;
            for (const auto& p : programs) {
                try {
                    ExecutionTrace tr = execute(p, z0, modules, emb, kg, 5);
                    scores.push_back(
                        option_scores(tr.z_final, inst.options, kg, t.answer_type, emb, sidecar));
                } catch (const DegenerateOutput&) {
                    // program collapsed; fall back to the alternatives
                }
            }
            pred = answer(scores, mean_aggregate).index;
        } else {
            pred = igp_answer(inst.grounding, programs, kg, inst.options, t.answer_type).index;
        }
        rep.predictions.push_back(pred);
        auto& [correct, total] = rep.per_template[inst.tid];
        ++total;
        if (pred == inst.correct_index) ++correct;
    }
    rep.n = instances.size();
    std::size_t correct_all = 0;
    double macc = 0.0;
    for (const auto& [tid, ct] : rep.per_template) {
        correct_all += ct.first;
        macc += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    }
    if (rep.n > 0) rep.accuracy = static_cast<double>(correct_all) / static_cast<double>(rep.n);
    if (!rep.per_template.empty())
        rep.mean_template_accuracy = macc / static_cast<double>(rep.per_template.size());
    return rep;
}

void save_eval_report(const std::string& path, const EvalReport& report, std::uint64_t seed) {
    ordered_json j;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["method"] = report.method;
    j["n"] = report.n;
    j["accuracy"] = report.accuracy;
    j["mAcc"] = report.mean_template_accuracy;
    ordered_json per = ordered_json::object();
    for (const auto& [tid, ct] : report.per_template) {
        ordered_json row;
        row["correct"] = ct.first;
        row["total"] = ct.second;
        row["accuracy"] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
        per[tid] = row;
    }
    j["per_template"] = per;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

} // namespace kml
