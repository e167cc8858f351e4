#include "kml/relation_module.hpp"

#include <cmath>

#include "kml/errors.hpp"

namespace kml {

RelationModule RelationModule::init(const std::string& relation, std::size_t d, std::size_t h,
                                    Rng& rng) {
    RelationModule m;
    m.relation = relation;
    m.d_in = d;
    m.d_hidden = h;
    m.d_out = d;
    m.w1 = Mat(h, d);
    m.b1 = Vec(h, 0.0);
    m.w2 = Mat(d, h);
    m.b2 = Vec(d, 0.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : m.w1.a) v = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (double& v : m.w2.a) v = rng.uniform(-s2, s2);
    return m;
}

Vec RelationModule::forward(const Vec& x, ForwardCache* cache) const {
    if (x.size() != d_in)
        throw ShapeMismatch("forward: input dim " + std::to_string(x.size()) + " vs " +
                            std::to_string(d_in));
    const double n = norm2(x);
    if (std::abs(n - 1.0) > 1e-6)
        throw NonUnitInput("input norm " + std::to_string(n));
    Vec a1 = matvec(w1, x);
    axpy(1.0, b1, a1);
    for (double& v : a1) v = std::tanh(v);
    Vec z = matvec(w2, a1);
    axpy(1.0, b2, z);
    if (cache) {
        cache->x = x;
        cache->t1 = std::move(a1);
        cache->z = z;
        cache->valid = true;
    }
    return z;
}

RelationModule::Grads RelationModule::make_grads() const {
    Grads g;
    g.w1 = Mat(d_hidden, d_in);
    g.b1 = Vec(d_hidden, 0.0);
    g.w2 = Mat(d_out, d_hidden);
    g.b2 = Vec(d_out, 0.0);
    g.x = Vec(d_in, 0.0);
    return g;
}

void RelationModule::Grads::add_scaled(const Grads& g, double alpha) {
    for (std::size_t i = 0; i < w1.size(); ++i) w1.a[i] += alpha * g.w1.a[i];
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += alpha * g.b1[i];
    for (std::size_t i = 0; i < w2.size(); ++i) w2.a[i] += alpha * g.w2.a[i];
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] += alpha * g.b2[i];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * g.x[i];
}

void RelationModule::Grads::zero() {
    w1.zero();
    std::fill(b1.begin(), b1.end(), 0.0);
    w2.zero();
    std::fill(b2.begin(), b2.end(), 0.0);
    std::fill(x.begin(), x.end(), 0.0);
}

RelationModule::Grads RelationModule::backward(const ForwardCache& cache,
                                               const Vec& upstream) const {
    if (!cache.valid) throw MissingForwardCache("backward before forward");
    if (upstream.size() != d_out)
        throw ShapeMismatch("backward: upstream dim " + std::to_string(upstream.size()));
    Grads g = make_grads();
    // z = W2 t1 + b2
    g.b2 = upstream;
    outer_acc(g.w2, 1.0, upstream, cache.t1);
    Vec dt1 = matvec_t(w2, upstream);
    // t1 = tanh(a1): d tanh = 1 - tanh^2
    for (std::size_t i = 0; i < dt1.size(); ++i) dt1[i] *= 1.0 - cache.t1[i] * cache.t1[i];
    g.b1 = dt1;
    outer_acc(g.w1, 1.0, dt1, cache.x);
    g.x = matvec_t(w1, dt1);
    return g;
}

std::size_t module_param_count(std::size_t n_relations, std::size_t d, std::size_t h) {
    return n_relations * (h * d + h + d * h + d);
}

const RelationModule& ModuleSet::at(const std::string& relation) const {
    auto it = by_relation.find(relation);
    if (it == by_relation.end()) throw MissingModule("no module for '" + relation + "'");
    return it->second;
}

RelationModule& ModuleSet::at(const std::string& relation) {
    auto it = by_relation.find(relation);
    if (it == by_relation.end()) throw MissingModule("no module for '" + relation + "'");
    return it->second;
}

Vec normalize_backward(const Vec& v, const Vec& upstream) {
    const double n = norm2(v);
    if (n < 1e-12) throw DegenerateOutput("normalize_backward on near-zero vector");
    Vec vhat(v);
    scale(vhat, 1.0 / n);
    const double proj = dot(upstream, vhat);
    Vec g(upstream);
    axpy(-proj, vhat, g);
    scale(g, 1.0 / n);
    return g;
}

} // namespace kml
