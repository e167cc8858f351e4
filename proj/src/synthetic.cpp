#include "kml/synthetic.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "kml/rng.hpp"

namespace kml {

void SyntheticKgSpec::validate() const {
    std::vector<std::string> problems;
    if (tasks * steps_per_task < 5) problems.push_back("needs >= 5 steps total");
    if (tools < 5) problems.push_back("needs >= 5 tools");
    if (purposes < 5) problems.push_back("needs >= 5 purposes");
    if (!problems.empty()) {
        std::string msg = "distractor minimum 5 per answer vocabulary:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw SpecTooSmall(msg);
    }
    if (domains == 0 || tasks == 0 || steps_per_task < 2 || actions == 0 || objects == 0)
        throw BadConfig("need >= 1 domain/task/action/object and >= 2 steps per task");
    if (tools_per_step == 0 || tools_per_step > tools)
        throw BadConfig("tools_per_step must be in [1, tools]");
    if (purposes_per_carrier == 0 || purposes_per_carrier > purposes)
        throw BadConfig("purposes_per_carrier must be in [1, purposes]");
    if (branch_prob < 0.0 || branch_prob > 1.0) throw BadConfig("branch_prob must be in [0,1]");
    if (freq_max < 2) throw BadConfig("freq_max must be >= 2");
    if (similar_pairs > purposes * (purposes - 1) / 2)
        throw BadConfig("similar_pairs exceeds the number of distinct purpose pairs");
}

namespace {

std::string idx_id(const char* stem, std::size_t i) { return stem + std::to_string(i); }

} // namespace

KnowledgeGraph gen_kg(const SyntheticKgSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    KnowledgeGraph kg;
    using ET = EntityType;

    auto ent = [&kg](const std::string& id, ET t, const std::string& name) {
        kg.add_entity({id, t, name});
    };
    auto tri = [&kg](const std::string& h, const std::string& r, const std::string& t,
                     std::uint32_t f = 0) {
        kg.add_triplet({h, r, t, f ? std::optional<std::uint32_t>(f) : std::nullopt});
    };

    std::vector<std::string> domains, tasks, actions, objects, tools, purposes;
    for (std::size_t i = 0; i < spec.domains; ++i) domains.push_back(idx_id("dom", i));
    for (std::size_t i = 0; i < spec.tasks; ++i) tasks.push_back(idx_id("task", i));
    for (std::size_t i = 0; i < spec.actions; ++i) actions.push_back(idx_id("act", i));
    for (std::size_t i = 0; i < spec.objects; ++i) objects.push_back(idx_id("obj", i));
    for (std::size_t i = 0; i < spec.tools; ++i) tools.push_back(idx_id("tool", i));
    for (std::size_t i = 0; i < spec.purposes; ++i) purposes.push_back(idx_id("purp", i));

    for (const auto& id : domains) ent(id, ET::Domain, id);
    for (const auto& id : tasks) ent(id, ET::Task, id);
    for (const auto& id : actions) ent(id, ET::Action, id);
    for (const auto& id : objects) ent(id, ET::Object, id);
    for (const auto& id : tools) ent(id, ET::Tool, id);
    for (const auto& id : purposes) ent(id, ET::Purpose, id);
    ent("START", ET::Start, "");
    ent("END", ET::End, "");

    auto step_id = [](std::size_t ti, std::size_t si) {
        return "step" + std::to_string(ti) + "_" + std::to_string(si);
    };
    auto main_freq = [&rng, &spec]() {
        // branch edges use frequency 1, so [2, freq_max] keeps the main
        // successor the unique argmax
        return static_cast<std::uint32_t>(2 + rng.index(spec.freq_max - 1));
    };

    std::set<std::string> used_actions, used_objects, used_tools;
    for (std::size_t ti = 0; ti < spec.tasks; ++ti) {
        const std::string& task = tasks[ti];
        tri(domains[ti % spec.domains], "HAS_TASK", task);
        std::vector<std::string> steps;
        for (std::size_t si = 0; si < spec.steps_per_task; ++si) {
            const std::string id = step_id(ti, si);
            ent(id, ET::Step, id);
            steps.push_back(id);
            tri(task, "HAS_STEP", id);
        }
        tri("START", "HAS_NEXT_STEP", steps.front(), main_freq());
        for (std::size_t si = 0; si + 1 < steps.size(); ++si)
            tri(steps[si], "HAS_NEXT_STEP", steps[si + 1], main_freq());
        tri(steps.back(), "HAS_NEXT_STEP", "END", main_freq());
        for (std::size_t si = 0; si + 2 < steps.size(); ++si) {
            if (rng.uniform() >= spec.branch_prob) continue;
            const std::size_t lo = si + 2;
            tri(steps[si], "HAS_NEXT_STEP", steps[lo + rng.index(steps.size() - lo)], 1);
        }
        for (const auto& s : steps) {
            const std::string& a = actions[rng.index(actions.size())];
            tri(s, "HAS_ACTION", a);
            used_actions.insert(a);
            const std::string& o = objects[rng.index(objects.size())];
            tri(s, "HAS_OBJECT", o);
            used_objects.insert(o);
            const std::size_t nt = 1 + rng.index(spec.tools_per_step);
            for (std::size_t k = 0; k < nt; ++k) {
                const std::string& tl = tools[rng.index(tools.size())];
                tri(s, "HAS_TOOL", tl);
                used_tools.insert(tl);
            }
        }
    }

    // attach leftovers so every entity participates in training
    auto any_step = [&]() { return step_id(rng.index(spec.tasks), rng.index(spec.steps_per_task)); };
    for (const auto& t : tools)
        if (!used_tools.count(t)) tri(any_step(), "HAS_TOOL", t);
    for (const auto& a : actions)
        if (!used_actions.count(a)) tri(any_step(), "HAS_ACTION", a);
    for (const auto& o : objects)
        if (!used_objects.count(o)) tri(any_step(), "HAS_OBJECT", o);

    std::set<std::string> tool_covered; // purposes reachable from some tool
    for (const auto& t : tools) {
        const std::size_t np = 1 + rng.index(spec.purposes_per_carrier);
        for (std::size_t k = 0; k < np; ++k) {
            const std::string& p = purposes[rng.index(purposes.size())];
            tri(t, "HAS_PURPOSE", p);
            tool_covered.insert(p);
        }
    }
    for (const auto& a : actions) {
        const std::size_t np = 1 + rng.index(spec.purposes_per_carrier);
        for (std::size_t k = 0; k < np; ++k)
            tri(a, "ACTION_HAS_PURPOSE", purposes[rng.index(purposes.size())]);
    }
    for (const auto& o : objects) {
        const std::size_t np = 1 + rng.index(spec.purposes_per_carrier);
        for (std::size_t k = 0; k < np; ++k)
            tri(o, "OBJECT_HAS_PURPOSE", purposes[rng.index(purposes.size())]);
    }
    for (const auto& p : purposes)
        if (!tool_covered.count(p)) tri(tools[rng.index(tools.size())], "HAS_PURPOSE", p);

    // symmetric similar-purpose edges over distinct pairs
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < purposes.size(); ++i)
        for (std::size_t j = i + 1; j < purposes.size(); ++j)
            pairs.emplace_back(purposes[i], purposes[j]);
    rng.shuffle(pairs);
    for (std::size_t k = 0; k < spec.similar_pairs && k < pairs.size(); ++k)
        tri(pairs[k].first, "HAS_SIMILAR_PURPOSE", pairs[k].second);

    kg.freeze();
    return kg;
}

} // namespace kml
