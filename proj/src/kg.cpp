#include "kml/kg.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kml {

using ordered_json = nlohmann::ordered_json;

namespace {

const char* kTypeNames[] = {"Domain", "Task", "Step", "Action", "Object",
                            "Tool", "Purpose", "Start", "End"};

std::string freq_key(const std::string& h, const std::string& r, const std::string& t) {
    return h + '\x1f' + r + '\x1f' + t;
}

} // namespace

const char* to_string(EntityType t) { return kTypeNames[static_cast<int>(t)]; }

EntityType entity_type_from_string(const std::string& s) {
    for (int i = 0; i < 9; ++i)
        if (s == kTypeNames[i]) return static_cast<EntityType>(i);
    throw SchemaViolation("unknown entity type '" + s + "'");
}

bool is_sentinel(EntityType t) { return t == EntityType::Start || t == EntityType::End; }

bool RelationType::admits(EntityType h, EntityType t) const {
    if (h == head && t == tail) return true;
    for (const auto& [eh, et] : extra_pairs)
        if (h == eh && t == et) return true;
    return false;
}

std::set<EntityType> RelationType::head_types() const {
    std::set<EntityType> out{head};
    for (const auto& p : extra_pairs) out.insert(p.first);
    return out;
}

std::set<EntityType> RelationType::tail_types() const {
    std::set<EntityType> out{tail};
    for (const auto& p : extra_pairs) out.insert(p.second);
    return out;
}

// ---------------------------------------------------------------------------
// Schema

Schema::Schema() {
    using ET = EntityType;
    struct Fwd {
        const char* name;
        ET head, tail;
        const char* inverse; // empty => self-inverse
        bool freq;
        std::vector<std::pair<ET, ET>> extra;
    };
    const std::vector<Fwd> fwd = {
        {"HAS_TASK", ET::Domain, ET::Task, "IN_DOMAIN", false, {}},
        {"HAS_STEP", ET::Task, ET::Step, "IN_TASK", false, {}},
        {"HAS_NEXT_STEP", ET::Step, ET::Step, "HAS_PREVIOUS_STEP", true,
         {{ET::Start, ET::Step}, {ET::Step, ET::End}}},
        {"HAS_ACTION", ET::Step, ET::Action, "ACTION_IN_STEP", false, {}},
        {"HAS_OBJECT", ET::Step, ET::Object, "OBJECT_IN_STEP", false, {}},
        {"HAS_TOOL", ET::Step, ET::Tool, "TOOL_TO_STEP", false, {}},
        {"HAS_PURPOSE", ET::Tool, ET::Purpose, "PURPOSE_TO_TOOL", false, {}},
        {"ACTION_HAS_PURPOSE", ET::Action, ET::Purpose, "PURPOSE_TO_ACTION", false, {}},
        {"OBJECT_HAS_PURPOSE", ET::Object, ET::Purpose, "PURPOSE_TO_OBJECT", false, {}},
        {"HAS_SIMILAR_PURPOSE", ET::Purpose, ET::Purpose, "", false, {}},
    };
    for (const auto& f : fwd) {
        RelationType r;
        r.name = f.name;
        r.head = f.head;
        r.tail = f.tail;
        r.inverse_name = *f.inverse ? f.inverse : f.name;
        r.frequency_weighted = f.freq;
        r.extra_pairs = f.extra;
        by_name_[r.name] = r;
        forward_.push_back(r.name);
        if (*f.inverse) { // generated inverse: swap every admissible pair
            RelationType inv;
            inv.name = f.inverse;
            inv.head = f.tail;
            inv.tail = f.head;
            inv.inverse_name = f.name;
            inv.frequency_weighted = f.freq;
            for (const auto& [h, t] : f.extra) inv.extra_pairs.emplace_back(t, h);
            by_name_[inv.name] = inv;
        }
    }
    for (const auto& [name, r] : by_name_) names_.push_back(name);
}

const Schema& Schema::pkg() {
    static const Schema s;
    return s;
}

const RelationType* Schema::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &it->second;
}

const RelationType& Schema::at(const std::string& name) const {
    const RelationType* r = find(name);
    if (!r) throw UnknownRelation("'" + name + "'");
    return *r;
}

const RelationType& Schema::inverse_of(const std::string& name) const {
    return at(at(name).inverse_name);
}

bool Schema::chainable(const std::string& a, const std::string& b) const {
    const auto ta = at(a).tail_types();
    const auto hb = at(b).head_types();
    for (EntityType t : ta)
        if (hb.count(t)) return true;
    return false;
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

KnowledgeGraph::KnowledgeGraph() = default;

const Schema& KnowledgeGraph::schema() const { return Schema::pkg(); }

void KnowledgeGraph::ensure_mutable() const {
    if (frozen_) throw FrozenGraph("graph is frozen");
}

void KnowledgeGraph::add_entity(const Entity& e) {
    ensure_mutable();
    if (e.id.empty()) throw SchemaViolation("entity with empty id");
    if (e.name.empty() && !is_sentinel(e.etype))
        throw SchemaViolation("entity '" + e.id + "' has empty name");
    if (!entities_.emplace(e.id, e).second)
        throw DuplicateEntity("'" + e.id + "'");
}

void KnowledgeGraph::add_directed_edge(const std::string& head, const RelationType& rel,
                                       const std::string& tail,
                                       std::optional<std::uint32_t> freq) {
    adj_[head][rel.name].insert(tail);
    if (rel.frequency_weighted) {
        // re-adding an edge keeps the larger count
        auto& slot = freq_[freq_key(head, rel.name, tail)];
        slot = std::max(slot, freq.value_or(1u));
    }
}

void KnowledgeGraph::add_triplet(const Triplet& t) {
    ensure_mutable();
    const RelationType& rel = schema().at(t.relation);
    auto hit = entities_.find(t.head);
    auto tit = entities_.find(t.tail);
    if (hit == entities_.end()) throw UnknownEntity("head '" + t.head + "'");
    if (tit == entities_.end()) throw UnknownEntity("tail '" + t.tail + "'");
    if (!rel.admits(hit->second.etype, tit->second.etype))
        throw SchemaViolation("(" + t.head + " " + t.relation + " " + t.tail + "): " +
                              to_string(hit->second.etype) + "->" + to_string(tit->second.etype) +
                              " not admissible");
    if (t.freq && !rel.frequency_weighted)
        throw SchemaViolation("frequency on non-weighted relation '" + t.relation + "'");
    add_directed_edge(t.head, rel, t.tail, t.freq);
    add_directed_edge(t.tail, schema().inverse_of(t.relation), t.head, t.freq);
}

void KnowledgeGraph::freeze() {
    if (entities_.empty()) throw EmptyGraph("cannot freeze a graph with no entities");
    frozen_ = true;
}

bool KnowledgeGraph::has_entity(const std::string& id) const { return entities_.count(id) > 0; }

const Entity& KnowledgeGraph::entity(const std::string& id) const {
    auto it = entities_.find(id);
    if (it == entities_.end()) throw UnknownEntity("'" + id + "'");
    return it->second;
}

std::size_t KnowledgeGraph::triplet_count() const { return triplets(false).size(); }

std::vector<std::string> KnowledgeGraph::all_entity_ids() const {
    std::vector<std::string> out;
    out.reserve(entities_.size());
    for (const auto& [id, e] : entities_) out.push_back(id);
    return out;
}

std::vector<std::string> KnowledgeGraph::entities_of(EntityType t) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entities_)
        if (e.etype == t) out.push_back(id);
    return out;
}

const std::set<std::string>& KnowledgeGraph::tails(const std::string& head,
                                                   const std::string& relation) const {
    schema().at(relation);
    if (!has_entity(head)) throw UnknownEntity("'" + head + "'");
    auto hit = adj_.find(head);
    if (hit == adj_.end()) return empty_;
    auto rit = hit->second.find(relation);
    return rit == hit->second.end() ? empty_ : rit->second;
}

std::set<std::string> KnowledgeGraph::traverse(const std::set<std::string>& start,
                                               const std::vector<std::string>& path) const {
    if (path.empty()) throw IncompatiblePath("empty relation path");
    for (const auto& r : path) schema().at(r);
    for (std::size_t i = 0; i + 1 < path.size(); ++i)
        if (!schema().chainable(path[i], path[i + 1]))
            throw IncompatiblePath(path[i] + " -> " + path[i + 1] +
                                   ": no tail type is an admissible head type");
    for (const auto& id : start) entity(id);
    std::set<std::string> frontier = start;
    for (const auto& r : path) {
        std::set<std::string> next;
        for (const auto& h : frontier) {
            const auto& ts = tails(h, r);
            next.insert(ts.begin(), ts.end());
        }
        frontier = std::move(next);
    }
    return frontier;
}

std::string KnowledgeGraph::most_frequent_tail(const std::string& head,
                                               const std::string& relation) const {
    const RelationType& rel = schema().at(relation);
    if (!rel.frequency_weighted)
        throw NotFrequencyWeighted("'" + relation + "' carries no frequencies");
    const auto& ts = tails(head, relation);
    if (ts.empty()) throw NoTails("(" + head + ", " + relation + ")");
    std::string best;
    std::uint32_t best_f = 0;
    for (const auto& t : ts) { // sorted iteration => lexicographic tie-break for free
        const std::uint32_t f = freq_.at(freq_key(head, relation, t));
        if (best.empty() || f > best_f) {
            best = t;
            best_f = f;
        }
    }
    return best;
}

std::optional<std::uint32_t> KnowledgeGraph::freq(const std::string& head,
                                                  const std::string& relation,
                                                  const std::string& tail) const {
    auto it = freq_.find(freq_key(head, relation, tail));
    if (it == freq_.end()) return std::nullopt;
    return it->second;
}

std::vector<Triplet> KnowledgeGraph::triplets(bool include_inverse) const {
    const auto& fwd = schema().forward_names();
    std::vector<Triplet> out;
    for (const auto& [head, rels] : adj_) {
        for (const auto& [rel, tails] : rels) {
            const bool is_fwd =
                std::find(fwd.begin(), fwd.end(), rel) != fwd.end();
            if (!is_fwd && !include_inverse) continue;
            // self-inverse relations live in both orientations already; emit once
            if (!include_inverse && schema().at(rel).inverse_name == rel) {
                for (const auto& t : tails)
                    if (head <= t) out.push_back({head, rel, t, freq(head, rel, t)});
                continue;
            }
            for (const auto& t : tails) out.push_back({head, rel, t, freq(head, rel, t)});
        }
    }
    return out; // map iteration is already (head, relation, tail)-sorted
}

// ---------------------------------------------------------------------------
// JSON io

KnowledgeGraph KnowledgeGraph::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("'" + path + "': " + e.what());
    }

    KnowledgeGraph kg;
    std::vector<std::string> violations;
    auto note = [&violations](const std::string& msg) { violations.push_back(msg); };

    if (!j.contains("entities") || !j["entities"].is_array())
        note("missing 'entities' array");
    else {
        for (const auto& e : j["entities"]) {
            try {
                Entity ent;
                ent.id = e.at("id").get<std::string>();
                ent.etype = entity_type_from_string(e.at("type").get<std::string>());
                ent.name = e.value("name", std::string{});
                kg.add_entity(ent);
            } catch (const std::exception& ex) {
                note(std::string("entity ") + e.dump() + ": " + ex.what());
            }
        }
    }
    if (!j.contains("triplets") || !j["triplets"].is_array())
        note("missing 'triplets' array");
    else {
        for (const auto& t : j["triplets"]) {
            try {
                Triplet tr;
                tr.head = t.at("head").get<std::string>();
                tr.relation = t.at("relation").get<std::string>();
                tr.tail = t.at("tail").get<std::string>();
                if (t.contains("freq")) tr.freq = t["freq"].get<std::uint32_t>();
                kg.add_triplet(tr);
            } catch (const std::exception& ex) {
                note(std::string("triplet ") + t.dump() + ": " + ex.what());
            }
        }
    }
    if (!violations.empty()) { // eager: every problem in one message
        std::ostringstream msg;
        msg << violations.size() << " violation(s) in '" << path << "':";
        for (const auto& v : violations) msg << "\n  - " << v;
        throw SchemaViolation(msg.str());
    }
    kg.freeze();
    return kg;
}

void KnowledgeGraph::save_json(const std::string& path) const {
    ordered_json j;
    j["entities"] = ordered_json::array();
    for (const auto& [id, e] : entities_) {
        ordered_json je;
        je["id"] = e.id;
        je["type"] = to_string(e.etype);
        je["name"] = e.name;
        j["entities"].push_back(je);
    }
    j["triplets"] = ordered_json::array();
    for (const Triplet& t : triplets(false)) {
        ordered_json jt;
        jt["head"] = t.head;
        jt["relation"] = t.relation;
        jt["tail"] = t.tail;
        if (t.freq) jt["freq"] = *t.freq;
        j["triplets"].push_back(jt);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Toy fixture: two beverage tasks sharing the water-boiling step.
//
//   make_tea:    START -> boil_water -> pour_water -> END        (freq 3)
//   make_coffee: START -> grind_beans -> boil_water -> brew -> END (freq 1)
//
// so boil_water has next steps {pour_water: 3, brew: 1}.

KnowledgeGraph KnowledgeGraph::toy() {
    using ET = EntityType;
    KnowledgeGraph kg;
    auto ent = [&kg](const char* id, ET t, const char* name) {
        kg.add_entity({id, t, name});
    };
    ent("beverages", ET::Domain, "Beverages");
    ent("make_tea", ET::Task, "Make Tea");
    ent("make_coffee", ET::Task, "Make Coffee");
    ent("boil_water", ET::Step, "Boil the water");
    ent("pour_water", ET::Step, "Pour the water");
    ent("grind_beans", ET::Step, "Grind the beans");
    ent("brew", ET::Step, "Brew");
    ent("kettle", ET::Tool, "kettle");
    ent("cup", ET::Tool, "cup");
    ent("grinder", ET::Tool, "grinder");
    ent("heat_water", ET::Purpose, "heat water");
    ent("hold_liquid", ET::Purpose, "hold liquid");
    ent("grind_things", ET::Purpose, "grind things");
    ent("START", ET::Start, "");
    ent("END", ET::End, "");

    auto tri = [&kg](const char* h, const char* r, const char* t,
                     std::optional<std::uint32_t> f = std::nullopt) {
        kg.add_triplet({h, r, t, f});
    };
    tri("beverages", "HAS_TASK", "make_tea");
    tri("beverages", "HAS_TASK", "make_coffee");
    tri("make_tea", "HAS_STEP", "boil_water");
    tri("make_tea", "HAS_STEP", "pour_water");
    tri("make_coffee", "HAS_STEP", "grind_beans");
    tri("make_coffee", "HAS_STEP", "boil_water");
    tri("make_coffee", "HAS_STEP", "brew");

    tri("START", "HAS_NEXT_STEP", "boil_water", 3);
    tri("boil_water", "HAS_NEXT_STEP", "pour_water", 3);
    tri("pour_water", "HAS_NEXT_STEP", "END", 3);
    tri("START", "HAS_NEXT_STEP", "grind_beans", 1);
    tri("grind_beans", "HAS_NEXT_STEP", "boil_water", 1);
    tri("boil_water", "HAS_NEXT_STEP", "brew", 1);
    tri("brew", "HAS_NEXT_STEP", "END", 1);

    tri("boil_water", "HAS_TOOL", "kettle");
    tri("pour_water", "HAS_TOOL", "kettle");
    tri("pour_water", "HAS_TOOL", "cup");
    tri("grind_beans", "HAS_TOOL", "grinder");
    tri("brew", "HAS_TOOL", "cup");

    tri("kettle", "HAS_PURPOSE", "heat_water");
    tri("cup", "HAS_PURPOSE", "hold_liquid");
    tri("grinder", "HAS_PURPOSE", "grind_things");

    kg.freeze();
    return kg;
}

} // namespace kml
