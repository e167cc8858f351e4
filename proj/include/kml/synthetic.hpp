#pragma once

#include <cstddef>
#include <cstdint>

#include "kml/kg.hpp"

namespace kml {

// Parameters of the deterministic synthetic graph generator. Step/Tool/
// Purpose counts must support five answer options each; Task/Domain
// shortfalls surface at QA-generation time instead (small multi-task specs
// remain valid graphs).
struct SyntheticKgSpec {
    std::uint64_t seed = 0;
    std::size_t domains = 5;
    std::size_t tasks = 10;
    std::size_t steps_per_task = 5;
    std::size_t actions = 12;
    std::size_t objects = 12;
    std::size_t tools = 20;
    std::size_t purposes = 12;
    std::size_t tools_per_step = 2;        // max tools drawn per step
    std::size_t purposes_per_carrier = 2;  // max purposes per tool/action/object
    double branch_prob = 0.3;              // chance of an extra next-step edge
    std::uint32_t freq_max = 5;            // main-chain transition frequency cap
    std::size_t similar_pairs = 6;         // HAS_SIMILAR_PURPOSE edges

    void validate() const; // throws SpecTooSmall / BadConfig
};

// Builds a frozen, schema-valid graph: per-task step chains wired from Start
// to End with frequency-weighted transitions, steps equipped with actions,
// objects and tools, carriers equipped with purposes, every Tool/Action/
// Object/Purpose attached somewhere. Deterministic per seed.
KnowledgeGraph gen_kg(const SyntheticKgSpec& spec);

} // namespace kml
