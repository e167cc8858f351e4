#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "kml/linalg.hpp"
#include "kml/rng.hpp"

namespace kml {

// One knowledge module: z = W2 * tanh(W1 * x + b1) + b2 with d_in == d_out.
// Inputs must be unit vectors (the embedding table keeps rows normalized);
// consumers work with the normalized output zhat = z / ||z||.
struct RelationModule {
    std::string relation;
    std::size_t d_in = 0;
    std::size_t d_hidden = 0;
    std::size_t d_out = 0;
    Mat w1; // d_hidden x d_in
    Vec b1; // d_hidden
    Mat w2; // d_out x d_hidden
    Vec b2; // d_out

    // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases
    static RelationModule init(const std::string& relation, std::size_t d, std::size_t h, Rng& rng);

    // everything backward() needs, captured by forward()
    struct ForwardCache {
        Vec x;  // input
        Vec t1; // tanh(W1 x + b1)
        Vec z;  // raw output
        bool valid = false;
    };

    // raw output z; throws NonUnitInput when | ||x|| - 1 | > 1e-6
    Vec forward(const Vec& x, ForwardCache* cache = nullptr) const;

    // z / ||z||; throws DegenerateOutput when ||z|| < 1e-12
    static Vec normalized(const Vec& z) { return kml::normalized(z, 1e-12); }

    struct Grads {
        Mat w1;
        Vec b1;
        Mat w2;
        Vec b2;
        Vec x; // gradient w.r.t. the input
        void add_scaled(const Grads& g, double alpha);
        void zero();
    };

    Grads make_grads() const;

    // dL/d(params, x) given upstream = dL/dz; requires a valid cache
    Grads backward(const ForwardCache& cache, const Vec& upstream) const;

    std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// parameters of `n_relations` modules at embedding dim d, hidden width h
std::size_t module_param_count(std::size_t n_relations, std::size_t d, std::size_t h);

// All trained modules of one run, keyed by relation name.
struct ModuleSet {
    std::size_t dim = 0;
    std::size_t hidden = 0;
    std::map<std::string, RelationModule> by_relation;

    bool has(const std::string& relation) const { return by_relation.count(relation) > 0; }
    const RelationModule& at(const std::string& relation) const; // throws MissingModule
    RelationModule& at(const std::string& relation);
};

// chain rule through v -> v/||v||: grad_v = (g - (g . vhat) vhat) / ||v||
Vec normalize_backward(const Vec& v, const Vec& upstream);

} // namespace kml
