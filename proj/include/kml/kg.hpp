#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kml/errors.hpp"

namespace kml {

// Entity types of the procedural knowledge schema. Start/End are sentinel
// types that only participate in next/previous-step transitions.
enum class EntityType {
    Domain,
    Task,
    Step,
    Action,
    Object,
    Tool,
    Purpose,
    Start,
    End,
};

const char* to_string(EntityType t);
EntityType entity_type_from_string(const std::string& s); // throws SchemaViolation

bool is_sentinel(EntityType t);

struct Entity {
    std::string id;
    EntityType etype = EntityType::Step;
    std::string name; // may be empty only for sentinels
};

// A directed, typed relation. `head`/`tail` are the primary admissible types;
// `extra_pairs` widens the relation for sentinel transitions (e.g. Start->Step
// under HAS_NEXT_STEP). Every relation declares exactly one inverse; a
// relation may be its own inverse (HAS_SIMILAR_PURPOSE).
struct RelationType {
    std::string name;
    EntityType head = EntityType::Step;
    EntityType tail = EntityType::Step;
    std::string inverse_name;
    bool frequency_weighted = false;
    std::vector<std::pair<EntityType, EntityType>> extra_pairs;

    bool admits(EntityType h, EntityType t) const;
    std::set<EntityType> head_types() const;
    std::set<EntityType> tail_types() const;
};

struct Triplet {
    std::string head;
    std::string relation;
    std::string tail;
    std::optional<std::uint32_t> freq; // only on frequency-weighted relations
};

// Fixed schema shared by every graph in this project: 10 forward relations
// plus generated inverses (19 named relations; HAS_SIMILAR_PURPOSE is
// self-inverse).
class Schema {
public:
    static const Schema& pkg();

    const RelationType* find(const std::string& name) const;
    const RelationType& at(const std::string& name) const; // throws UnknownRelation
    const RelationType& inverse_of(const std::string& name) const;

    // all names, lexicographically sorted
    const std::vector<std::string>& relation_names() const { return names_; }
    // the declared forward subset, in declaration order
    const std::vector<std::string>& forward_names() const { return forward_; }

    // true when some tail type of `a` is a head type of `b`
    bool chainable(const std::string& a, const std::string& b) const;

private:
    Schema();
    std::map<std::string, RelationType> by_name_;
    std::vector<std::string> names_;
    std::vector<std::string> forward_;
};

// In-memory triplet store with eager schema validation, automatic inverse
// closure and deterministic (sorted) iteration everywhere. Mutation is
// forbidden after freeze(); downstream consumers require a frozen graph.
class KnowledgeGraph {
public:
    KnowledgeGraph();

    void add_entity(const Entity& e);       // throws DuplicateEntity/SchemaViolation
    void add_triplet(const Triplet& t);     // registers the inverse edge as well
    void freeze();
    bool frozen() const { return frozen_; }

    const Schema& schema() const;

    bool has_entity(const std::string& id) const;
    const Entity& entity(const std::string& id) const; // throws UnknownEntity

    std::size_t entity_count() const { return entities_.size(); }
    std::size_t triplet_count() const; // forward orientation only

    // sorted ids
    std::vector<std::string> all_entity_ids() const;
    std::vector<std::string> entities_of(EntityType t) const;

    // tails of (head, relation); empty set when none. Throws on unknown ids.
    const std::set<std::string>& tails(const std::string& head, const std::string& relation) const;

    // image of `start` under the relation path; BFS with dedup per hop.
    // Throws IncompatiblePath on an empty or schema-incompatible path.
    std::set<std::string> traverse(const std::set<std::string>& start,
                                   const std::vector<std::string>& path) const;

    // argmax-frequency tail; lexicographically smallest id wins ties.
    // Throws NotFrequencyWeighted / NoTails.
    std::string most_frequent_tail(const std::string& head, const std::string& relation) const;

    std::optional<std::uint32_t> freq(const std::string& head, const std::string& relation,
                                      const std::string& tail) const;

    // forward-orientation triplets, sorted by (head, relation, tail);
    // include_inverse additionally yields the mirrored edges.
    std::vector<Triplet> triplets(bool include_inverse = false) const;

    // JSON file format: {"entities": [{id,type,name}...], "triplets":
    // [{head,relation,tail,freq?}...]}. load() validates eagerly and reports
    // *all* violations in one SchemaViolation message.
    static KnowledgeGraph load_json(const std::string& path);
    void save_json(const std::string& path) const;

    // the bundled tea/coffee fixture used across tests and docs
    static KnowledgeGraph toy();

private:
    void ensure_mutable() const;
    void add_directed_edge(const std::string& head, const RelationType& rel,
                           const std::string& tail, std::optional<std::uint32_t> freq);

    bool frozen_ = false;
    std::map<std::string, Entity> entities_;
    // adjacency: head id -> relation name -> tail ids
    std::map<std::string, std::map<std::string, std::set<std::string>>> adj_;
    // frequencies: "head\x1frel\x1ftail" -> count (only weighted relations)
    std::map<std::string, std::uint32_t> freq_;
    std::set<std::string> empty_;
};

} // namespace kml
