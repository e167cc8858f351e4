#include "kml/qa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "kml/rng.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// templates

const std::vector<QaTemplate>& all_templates() {
    using ET = EntityType;
    static const std::vector<QaTemplate> t = {
        {"Q1", ET::Step, ET::Tool, "What tool can be used in this step?",
         "Step -HAS_TOOL-> Tool"},
        {"Q2", ET::Step, ET::Step, "What is the most probable next step?",
         "Step -HAS_NEXT_STEP[freq-max]-> Step"},
        {"Q3", ET::Step, ET::Step, "What could potentially be the next step?",
         "Step -HAS_NEXT_STEP-> Step"},
        {"Q4", ET::Step, ET::Step, "What could potentially be the preceding step?",
         "Step -HAS_PREVIOUS_STEP-> Step"},
        {"Q5", ET::Step, ET::Step, "What is the most probable preceding step?",
         "Step -HAS_PREVIOUS_STEP[freq-max]-> Step"},
        {"Q6", ET::Step, ET::Tool, "What tool could be used in the next step?",
         "Step -HAS_NEXT_STEP-> Step -HAS_TOOL-> Tool"},
        {"Q7", ET::Task, ET::Step, "What is the most probable initial step of this task?",
         "Task -HAS_STEP-> Step [freq-max from Start]"},
        {"Q8", ET::Task, ET::Step, "What is the most probable final step of this task?",
         "Task -HAS_STEP-> Step [freq-max into End]"},
        {"Q9", ET::Task, ET::Domain, "Which domain does this task belong to?",
         "Task -IN_DOMAIN-> Domain"},
        {"Q10", ET::Step, ET::Purpose, "What is the purpose of the tool used in this step?",
         "Step -HAS_TOOL-> Tool -HAS_PURPOSE-> Purpose"},
        {"Q11", ET::Step, ET::Purpose, "What is the purpose of the action performed in this step?",
         "Step -HAS_ACTION-> Action -ACTION_HAS_PURPOSE-> Purpose"},
        {"Q12", ET::Step, ET::Purpose, "What is the purpose of the object used in this step?",
         "Step -HAS_OBJECT-> Object -OBJECT_HAS_PURPOSE-> Purpose"},
        {"Q13", ET::Step, ET::Purpose,
         "For what additional purposes can the tool in this step be used, aside from its "
         "intended use here?",
         "Step -HAS_TOOL-> Tool -HAS_PURPOSE-> Purpose, minus the step's intended purposes"},
        {"Q14", ET::Step, ET::Purpose,
         "For what additional purposes can the object in this step be used, aside from its "
         "intended use here?",
         "Step -HAS_OBJECT-> Object -OBJECT_HAS_PURPOSE-> Purpose, minus the step's intended "
         "purposes"},
        {"Q15", ET::Step, ET::Tool,
         "What alternative tool can be used for this step if the current tool is unavailable?",
         "Step -HAS_TOOL-> Tool -HAS_PURPOSE-> Purpose (-HAS_SIMILAR_PURPOSE-> Purpose)? "
         "-PURPOSE_TO_TOOL-> Tool, minus the step's own tools"},
        {"Q16", ET::Step, ET::Task,
         "Which other task can use the tool shown in this step for the same purpose?",
         "Step -HAS_TOOL-> Tool[with purpose] -TOOL_TO_STEP-> Step -IN_TASK-> Task, minus the "
         "step's own tasks"},
        {"Q17", ET::Step, ET::Task,
         "Which other task uses the object in this step for the same purpose?",
         "Step -HAS_OBJECT-> Object[with purpose] -OBJECT_IN_STEP-> Step -IN_TASK-> Task, minus "
         "the step's own tasks"},
    };
    return t;
}

const QaTemplate& template_by_id(const std::string& tid) {
    for (const auto& t : all_templates())
        if (t.tid == tid) return t;
    throw UnknownTemplate("'" + tid + "'");
}

// ---------------------------------------------------------------------------
// oracle queries

namespace {

std::string sole_sentinel(const KnowledgeGraph& kg, EntityType t) {
    const auto ids = kg.entities_of(t);
    return ids.empty() ? std::string{} : ids.front();
}

std::set<std::string> set_union(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::set<std::string> out = a;
    out.insert(b.begin(), b.end());
    return out;
}

} // namespace

OracleQuery build_oracle_query(const std::string& tid, const KnowledgeGraph& kg,
                               const std::string& g) {
    template_by_id(tid); // throws UnknownTemplate
    kg.entity(g);        // throws UnknownEntity
    OracleQuery q;
    q.start = g;
    auto safe_traverse = [&kg](const std::set<std::string>& s,
                               const std::vector<std::string>& path) {
        return kg.traverse(s, path);
    };
    if (tid == "Q1") {
        q.hops = {{"HAS_TOOL"}};
    } else if (tid == "Q2") {
        q.hops = {{"HAS_NEXT_STEP", true}};
    } else if (tid == "Q3") {
        q.hops = {{"HAS_NEXT_STEP"}};
    } else if (tid == "Q4") {
        q.hops = {{"HAS_PREVIOUS_STEP"}};
    } else if (tid == "Q5") {
        q.hops = {{"HAS_PREVIOUS_STEP", true}};
    } else if (tid == "Q6") {
        q.hops = {{"HAS_NEXT_STEP"}, {"HAS_TOOL"}};
    } else if (tid == "Q7") {
        q.hops = {{"HAS_STEP"}};
        q.freq_select = {FreqSelect::Mode::FromHead, sole_sentinel(kg, EntityType::Start),
                         "HAS_NEXT_STEP"};
    } else if (tid == "Q8") {
        q.hops = {{"HAS_STEP"}};
        q.freq_select = {FreqSelect::Mode::ToTail, sole_sentinel(kg, EntityType::End),
                         "HAS_NEXT_STEP"};
    } else if (tid == "Q9") {
        q.hops = {{"IN_DOMAIN"}};
    } else if (tid == "Q10") {
        q.hops = {{"HAS_TOOL"}, {"HAS_PURPOSE"}};
    } else if (tid == "Q11") {
        q.hops = {{"HAS_ACTION"}, {"ACTION_HAS_PURPOSE"}};
    } else if (tid == "Q12") {
        q.hops = {{"HAS_OBJECT"}, {"OBJECT_HAS_PURPOSE"}};
    } else if (tid == "Q13") {
        // additional tool purposes: negate the step's intended purposes,
        // proxied by what its action and object are for
        q.hops = {{"HAS_TOOL"}, {"HAS_PURPOSE"}};
        q.exclude = set_union(safe_traverse({g}, {"HAS_ACTION", "ACTION_HAS_PURPOSE"}),
                              safe_traverse({g}, {"HAS_OBJECT", "OBJECT_HAS_PURPOSE"}));
    } else if (tid == "Q14") {
        q.hops = {{"HAS_OBJECT"}, {"OBJECT_HAS_PURPOSE"}};
        q.exclude = set_union(safe_traverse({g}, {"HAS_ACTION", "ACTION_HAS_PURPOSE"}),
                              safe_traverse({g}, {"HAS_TOOL", "HAS_PURPOSE"}));
    } else if (tid == "Q15") {
        // same or similar purpose, different tool
        q.hops = {{"HAS_TOOL"}, {"HAS_PURPOSE"}, {"HAS_SIMILAR_PURPOSE", false, true},
                  {"PURPOSE_TO_TOOL"}};
        q.exclude = kg.tails(g, "HAS_TOOL");
    } else if (tid == "Q16") {
        q.hops = {{"HAS_TOOL", false, false, "HAS_PURPOSE"}, {"TOOL_TO_STEP"}, {"IN_TASK"}};
        q.exclude = kg.tails(g, "IN_TASK");
    } else if (tid == "Q17") {
        q.hops = {{"HAS_OBJECT", false, false, "OBJECT_HAS_PURPOSE"},
                  {"OBJECT_IN_STEP"},
                  {"IN_TASK"}};
        q.exclude = kg.tails(g, "IN_TASK");
    }
    return q;
}

std::set<std::string> eval_oracle_query(const KnowledgeGraph& kg, const OracleQuery& q) {
    kg.entity(q.start);
    auto drop_sentinels = [&kg](std::set<std::string>& s) {
        for (auto it = s.begin(); it != s.end();)
            it = is_sentinel(kg.entity(*it).etype) ? s.erase(it) : std::next(it);
    };
    std::set<std::string> frontier{q.start};
    for (const auto& hop : q.hops) {
        kg.schema().at(hop.rel);
        std::set<std::string> image;
        for (const auto& h : frontier) {
            if (hop.freq_max) {
                // most frequent non-sentinel tail per head, lexicographic ties
                std::string best;
                std::uint32_t best_f = 0;
                for (const auto& t : kg.tails(h, hop.rel)) {
                    if (is_sentinel(kg.entity(t).etype)) continue;
                    const std::uint32_t f = kg.freq(h, hop.rel, t).value_or(1);
                    if (best.empty() || f > best_f) {
                        best = t;
                        best_f = f;
                    }
                }
                if (!best.empty()) image.insert(best);
                continue;
            }
            for (const auto& t : kg.tails(h, hop.rel)) {
                if (!hop.require_nonempty.empty() && kg.tails(t, hop.require_nonempty).empty())
                    continue;
                image.insert(t);
            }
        }
        if (hop.optional_hop) image.insert(frontier.begin(), frontier.end());
        frontier = std::move(image);
    }
    if (q.freq_select.mode != FreqSelect::Mode::None) {
        const auto& fs = q.freq_select;
        std::string best;
        std::uint32_t best_f = 0;
        if (!fs.anchor.empty() && kg.has_entity(fs.anchor)) {
            for (const auto& c : frontier) {
                if (is_sentinel(kg.entity(c).etype)) continue;
                std::optional<std::uint32_t> f;
                if (fs.mode == FreqSelect::Mode::FromHead) {
                    if (kg.tails(fs.anchor, fs.rel).count(c)) f = kg.freq(fs.anchor, fs.rel, c);
                } else {
                    if (kg.tails(c, fs.rel).count(fs.anchor)) f = kg.freq(c, fs.rel, fs.anchor);
                }
                if (f && (best.empty() || *f > best_f)) {
                    best = c;
                    best_f = *f;
                }
            }
        }
        frontier.clear();
        if (!best.empty()) frontier.insert(best);
    }
    drop_sentinels(frontier);
    for (const auto& e : q.exclude) frontier.erase(e);
    return frontier;
}

// ---------------------------------------------------------------------------
// option labels

std::optional<std::string> resolve_option(const KnowledgeGraph& kg, EntityType answer_type,
                                          const std::string& label) {
    std::optional<std::string> found;
    for (const auto& id : kg.entities_of(answer_type)) {
        if (kg.entity(id).name != label) continue;
        if (found) return std::nullopt; // ambiguous label
        found = id;
    }
    return found;
}

// ---------------------------------------------------------------------------
// instantiation

namespace {

// confusable entities for noisy groundings: same type, co-task first
std::vector<std::string> confusables_for(const KnowledgeGraph& kg, const std::string& g,
                                         EntityType etype, Rng& rng) {
    std::set<std::string> siblings;
    if (etype == EntityType::Step)
        siblings = kg.traverse({g}, {"IN_TASK", "HAS_STEP"});
    else if (etype == EntityType::Task)
        siblings = kg.traverse({g}, {"IN_DOMAIN", "HAS_TASK"});
    siblings.erase(g);
    std::vector<std::string> near(siblings.begin(), siblings.end());
    std::vector<std::string> far;
    for (const auto& id : kg.entities_of(etype))
        if (id != g && !siblings.count(id)) far.push_back(id);
    rng.shuffle(near);
    rng.shuffle(far);
    near.insert(near.end(), far.begin(), far.end());
    return near;
}

struct OptionCounters {
    std::map<std::string, int> appearances; // label shown among the 5 options
    std::map<std::string, int> correct;     // label used as the correct answer
};

// least-used-as-correct member of the oracle set; rng breaks ties
std::string pick_correct(const std::set<std::string>& oracle, const OptionCounters& c, Rng& rng) {
    int best = -1;
    std::vector<std::string> tied;
    for (const auto& id : oracle) {
        auto it = c.correct.find(id);
        const int n = it == c.correct.end() ? 0 : it->second;
        if (best < 0 || n < best) {
            best = n;
            tied = {id};
        } else if (n == best) {
            tied.push_back(id);
        }
    }
    return tied[rng.index(tied.size())];
}

std::vector<std::string> draw_distractors(const KnowledgeGraph& kg, EntityType answer_type,
                                          const std::set<std::string>& correct_set,
                                          const OptionCounters& c, Rng& rng,
                                          const std::set<std::string>& taken_labels) {
    std::vector<std::string> pool;
    for (const auto& id : kg.entities_of(answer_type)) {
        if (correct_set.count(id)) continue;
        if (taken_labels.count(kg.entity(id).name)) continue;
        pool.push_back(id);
    }
    if (pool.size() < 4)
        throw InsufficientVocabulary("need 4 distractors of type " +
                                     std::string(to_string(answer_type)) + ", pool has " +
                                     std::to_string(pool.size()));
    std::vector<std::string> out;
    std::set<std::string> labels = taken_labels;
    while (out.size() < 4) {
        if (pool.empty())
            throw InsufficientVocabulary("labels of type " +
                                         std::string(to_string(answer_type)) + " not distinct");
        std::vector<double> w;
        w.reserve(pool.size());
        for (const auto& id : pool) {
            auto it = c.appearances.find(id);
            w.push_back(1.0 / (1.0 + (it == c.appearances.end() ? 0 : it->second)));
        }
        const std::size_t k = rng.weighted_index(w);
        const std::string id = pool[k];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
        if (!labels.insert(kg.entity(id).name).second) continue; // duplicate label
        out.push_back(id);
    }
    return out;
}

} // namespace

std::vector<QAInstance> instantiate(const QaTemplate& t, const KnowledgeGraph& kg,
                                    const QaGenConfig& cfg) {
    if (!kg.frozen()) throw FrozenGraph("instantiate requires a frozen graph");
    if (kg.entities_of(t.answer_type).size() < 5)
        throw InsufficientVocabulary("need >=5 entities of type " +
                                     std::string(to_string(t.answer_type)) + " for options");
    Rng rng(child_seed(cfg.seed, "qa/" + t.tid));

    struct Realizable {
        std::string g;
        OracleQuery query;
        std::set<std::string> answers;
    };
    std::vector<Realizable> realizable;
    for (const auto& g : kg.entities_of(t.grounding_type)) {
        OracleQuery q = build_oracle_query(t.tid, kg, g);
        std::set<std::string> answers = eval_oracle_query(kg, q);
        if (answers.empty()) continue;
        realizable.push_back({g, std::move(q), std::move(answers)});
    }
    if (realizable.empty())
        throw NoRealizableGrounding(t.tid + ": empty oracle image for every grounding");
    rng.shuffle(realizable);

    OptionCounters counters;
    std::vector<QAInstance> out;
    out.reserve(cfg.count);
    for (std::size_t i = 0; i < cfg.count; ++i) {
        const Realizable& r = realizable[i % realizable.size()];
        QAInstance inst;
        inst.tid = t.tid;
        inst.question = t.question;
        inst.oracle_query = r.query;
        inst.grounding.etype = t.grounding_type;
        inst.grounding.entity_id = r.g;

        const std::string correct = pick_correct(r.answers, counters, rng);
        const std::vector<std::string> distractors = draw_distractors(
            kg, t.answer_type, r.answers, counters, rng, {kg.entity(correct).name});
        std::vector<std::string> opts = {correct};
        opts.insert(opts.end(), distractors.begin(), distractors.end());
        rng.shuffle(opts);
        for (std::size_t k = 0; k < 5; ++k) {
            inst.options[k] = kg.entity(opts[k]).name;
            if (opts[k] == correct) inst.correct_index = static_cast<int>(k);
            ++counters.appearances[opts[k]];
        }
        ++counters.correct[correct];

        if (cfg.grounding_topk > 1 && cfg.grounding_noise > 0.0) {
            auto conf = confusables_for(kg, r.g, t.grounding_type, rng);
            const std::size_t k =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.grounding_topk) - 1,
                                      conf.size());
            if (k > 0) {
                inst.grounding.scores.emplace_back(r.g, 1.0 - cfg.grounding_noise);
                for (std::size_t j = 0; j < k; ++j)
                    inst.grounding.scores.emplace_back(conf[j],
                                                       cfg.grounding_noise /
                                                           static_cast<double>(k));
            }
        }
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<QAInstance> instantiate(const QaTemplate& t, const KnowledgeGraph& kg,
                                    std::uint64_t seed, std::size_t count) {
    QaGenConfig cfg;
    cfg.seed = seed;
    cfg.count = count;
    return instantiate(t, kg, cfg);
}

// ---------------------------------------------------------------------------
// validation

namespace {

ordered_json query_to_json(const OracleQuery& q) {
    ordered_json j;
    j["start"] = q.start;
    j["hops"] = ordered_json::array();
    for (const auto& h : q.hops) {
        ordered_json jh;
        jh["rel"] = h.rel;
        if (h.freq_max) jh["freq_max"] = true;
        if (h.optional_hop) jh["optional"] = true;
        if (!h.require_nonempty.empty()) jh["require_nonempty"] = h.require_nonempty;
        j["hops"].push_back(jh);
    }
    if (!q.exclude.empty()) j["exclude"] = q.exclude;
    if (q.freq_select.mode != FreqSelect::Mode::None) {
        ordered_json js;
        js["mode"] = q.freq_select.mode == FreqSelect::Mode::FromHead ? "from_head" : "to_tail";
        js["anchor"] = q.freq_select.anchor;
        js["rel"] = q.freq_select.rel;
        j["freq_select"] = js;
    }
    return j;
}

OracleQuery query_from_json(const ordered_json& j) {
    OracleQuery q;
    q.start = j.at("start").get<std::string>();
    for (const auto& jh : j.at("hops")) {
        OracleHop h;
        h.rel = jh.at("rel").get<std::string>();
        h.freq_max = jh.value("freq_max", false);
        h.optional_hop = jh.value("optional", false);
        h.require_nonempty = jh.value("require_nonempty", std::string{});
        q.hops.push_back(std::move(h));
    }
    if (j.contains("exclude"))
        q.exclude = j["exclude"].get<std::set<std::string>>();
    if (j.contains("freq_select")) {
        const auto& js = j["freq_select"];
        q.freq_select.mode = js.at("mode").get<std::string>() == "from_head"
                                 ? FreqSelect::Mode::FromHead
                                 : FreqSelect::Mode::ToTail;
        q.freq_select.anchor = js.at("anchor").get<std::string>();
        q.freq_select.rel = js.at("rel").get<std::string>();
    }
    return q;
}

} // namespace

bool validate(const QAInstance& inst, const KnowledgeGraph& kg) {
    try {
        const QaTemplate& t = template_by_id(inst.tid);
        if (kg.entity(inst.grounding.entity_id).etype != t.grounding_type) return false;
        if (inst.correct_index < 0 || inst.correct_index >= 5) return false;
        std::set<std::string> labels(inst.options.begin(), inst.options.end());
        if (labels.size() != 5) return false;
        if (!inst.grounding.scores.empty()) { // scores, when present, sum to 1
            double s = 0.0;
            for (const auto& [id, w] : inst.grounding.scores) {
                kg.entity(id);
                if (w < 0.0) return false;
                s += w;
            }
            if (std::abs(s - 1.0) > 1e-6) return false;
        }
        const std::set<std::string> answers = eval_oracle_query(kg, inst.oracle_query);
        int hits = 0;
        bool correct_in = false;
        for (std::size_t k = 0; k < 5; ++k) {
            const auto id = resolve_option(kg, t.answer_type, inst.options[k]);
            const bool in = id && answers.count(*id) > 0;
            if (in) ++hits;
            if (in && static_cast<int>(k) == inst.correct_index) correct_in = true;
        }
        return hits == 1 && correct_in;
    } catch (const std::exception&) {
        return false;
    }
}

double label_imbalance(const std::vector<QAInstance>& instances, const KnowledgeGraph& kg) {
    if (instances.empty()) return 1.0;
    const QaTemplate& t = template_by_id(instances.front().tid);
    std::map<std::string, int> counts;
    for (const auto& id : kg.entities_of(t.answer_type)) counts[kg.entity(id).name] = 0;
    for (const auto& inst : instances)
        for (const auto& label : inst.options) {
            auto it = counts.find(label);
            if (it != counts.end()) ++it->second;
        }
    int lo = 0, hi = 0;
    bool first = true;
    for (const auto& [label, n] : counts) {
        if (first) {
            lo = hi = n;
            first = false;
        }
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    return static_cast<double>(hi + 1) / static_cast<double>(lo + 1);
}

// ---------------------------------------------------------------------------
// JSON Lines io

void save_qa_jsonl(const std::string& path, const std::vector<QAInstance>& instances) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const auto& inst : instances) {
        ordered_json j;
        j["tid"] = inst.tid;
        ordered_json jg;
        jg["type"] = to_string(inst.grounding.etype);
        jg["id"] = inst.grounding.entity_id;
        if (!inst.grounding.scores.empty()) {
            ordered_json js = ordered_json::array();
            for (const auto& [id, w] : inst.grounding.scores) js.push_back({id, w});
            jg["scores"] = js;
        }
        j["grounding"] = jg;
        j["question"] = inst.question;
        j["options"] = inst.options;
        j["correct_index"] = inst.correct_index;
        j["oracle_query"] = query_to_json(inst.oracle_query);
        out << j.dump() << '\n';
    }
}

std::vector<QAInstance> load_qa_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<QAInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
            QAInstance inst;
            inst.tid = j.at("tid").get<std::string>();
            const auto& jg = j.at("grounding");
            inst.grounding.etype = entity_type_from_string(jg.at("type").get<std::string>());
            inst.grounding.entity_id = jg.at("id").get<std::string>();
            if (jg.contains("scores"))
                for (const auto& js : jg["scores"])
                    inst.grounding.scores.emplace_back(js.at(0).get<std::string>(),
                                                       js.at(1).get<double>());
            inst.question = j.at("question").get<std::string>();
            const auto opts = j.at("options").get<std::vector<std::string>>();
            if (opts.size() != 5) throw BadConfig("need exactly 5 options");
            std::copy(opts.begin(), opts.end(), inst.options.begin());
            inst.correct_index = j.at("correct_index").get<int>();
            inst.oracle_query = query_from_json(j.at("oracle_query"));
            out.push_back(std::move(inst));
        } catch (const std::exception& e) {
            throw IoError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace kml
