#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "kml/gradcheck.hpp"
#include "kml/linalg.hpp"
#include "kml/optimizer.hpp"
#include "kml/relation_module.hpp"
#include "kml/rng.hpp"
#include "kml/spectral.hpp"

using namespace kml;

namespace {

Vec random_unit(Rng& rng, std::size_t d) {
    Vec v(d);
    for (double& x : v) x = rng.gaussian();
    return normalized(v);
}

Mat identity(std::size_t n, double scale = 1.0) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = scale;
    return m;
}

// independent straight-line forward: z = W2 tanh(W1 x + b1) + b2
Vec forward_oracle(const RelationModule& m, const Vec& x) {
    Vec h(m.d_hidden, 0.0);
    for (std::size_t i = 0; i < m.d_hidden; ++i) {
        double s = m.b1[i];
        for (std::size_t j = 0; j < m.d_in; ++j) s += m.w1.at(i, j) * x[j];
        h[i] = std::tanh(s);
    }
    Vec z(m.d_out, 0.0);
    for (std::size_t i = 0; i < m.d_out; ++i) {
        double s = m.b2[i];
        for (std::size_t j = 0; j < m.d_hidden; ++j) s += m.w2.at(i, j) * h[j];
        z[i] = s;
    }
    return z;
}

// one-sided Jacobi: rotate column pairs until orthogonal; the largest
// singular value is then the largest column norm
double svd_max_jacobi(Mat a) {
    const std::size_t n = a.cols;
    auto col_dot = [&a, &n](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t r = 0; r < a.rows; ++r) s += a.at(r, i) * a.at(r, j);
        (void)n;
        return s;
    };
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double app = col_dot(i, i);
                const double aqq = col_dot(j, j);
                const double apq = col_dot(i, j);
                off = std::max(off, std::abs(apq));
                if (std::abs(apq) < 1e-14) continue;
                const double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t r = 0; r < a.rows; ++r) {
                    const double x = a.at(r, i), y = a.at(r, j);
                    a.at(r, i) = c * x + s * y;
                    a.at(r, j) = -s * x + c * y;
                }
            }
        }
        if (off < 1e-13) break;
    }
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) best = std::max(best, std::sqrt(col_dot(i, i)));
    return best;
}

bool same_bits(const Vec& a, const Vec& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && same_bits(a.a, b.a);
}

} // namespace

TEST_CASE("forward: bias-only module maps everything to b2 direction") {
    RelationModule m;
    m.relation = "R";
    m.d_in = m.d_out = 4;
    m.d_hidden = 3;
    m.w1 = Mat(3, 4);
    m.b1 = Vec(3, 0.0);
    m.w2 = Mat(4, 3);
    m.b2 = Vec{1.0, 0.0, 0.0, 0.0};
    Rng rng(1);
    const Vec zhat = RelationModule::normalized(m.forward(random_unit(rng, 4)));
    CHECK(zhat[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < 4; ++i) CHECK(zhat[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("forward: all-zero parameters degenerate on normalization") {
    RelationModule m;
    m.relation = "R";
    m.d_in = m.d_out = 4;
    m.d_hidden = 3;
    m.w1 = Mat(3, 4);
    m.b1 = Vec(3, 0.0);
    m.w2 = Mat(4, 3);
    m.b2 = Vec(4, 0.0);
    Rng rng(2);
    const Vec z = m.forward(random_unit(rng, 4));
    CHECK(norm2(z) == 0.0);
    CHECK_THROWS_AS(RelationModule::normalized(z), DegenerateOutput);
}

TEST_CASE("forward: rejects non-unit input") {
    Rng rng(3);
    RelationModule m = RelationModule::init("R", 8, 4, rng);
    Vec x(8, 0.5); // norm = sqrt(2)
    CHECK_THROWS_AS(m.forward(x), NonUnitInput);
    CHECK_THROWS_AS(m.forward(Vec(8, 0.0)), NonUnitInput);
}

TEST_CASE("forward matches an independent reimplementation to 1e-10") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        RelationModule m = RelationModule::init("R", 16, 8, rng);
        const Vec x = random_unit(rng, 16);
        const Vec got = m.forward(x);
        const Vec want = forward_oracle(m, x);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
    }
}

TEST_CASE("gradcheck: analytic vs central differences on 5 seeded modules") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        RelationModule m = RelationModule::init("R", 16, 8, rng);
        const Vec x = random_unit(rng, 16);
        Vec upstream(16);
        for (double& u : upstream) u = rng.gaussian();
        const GradCheckReport rep = gradcheck(m, x, upstream);
        worst = std::max(worst, rep.max_rel_error);
        CHECK(rep.n_checked > 0);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("backward: zero upstream yields zero gradients") {
    Rng rng(11);
    RelationModule m = RelationModule::init("R", 8, 4, rng);
    RelationModule::ForwardCache cache;
    m.forward(random_unit(rng, 8), &cache);
    const auto g = m.backward(cache, Vec(8, 0.0));
    for (double v : g.w1.a) CHECK(v == 0.0);
    for (double v : g.b1) CHECK(v == 0.0);
    for (double v : g.w2.a) CHECK(v == 0.0);
    for (double v : g.b2) CHECK(v == 0.0);
    for (double v : g.x) CHECK(v == 0.0);
}

TEST_CASE("backward: requires a valid forward cache") {
    Rng rng(12);
    RelationModule m = RelationModule::init("R", 8, 4, rng);
    RelationModule::ForwardCache cache; // never filled
    CHECK_THROWS_AS(m.backward(cache, Vec(8, 0.0)), MissingForwardCache);
}

TEST_CASE("backward: d||z||^2/db2 = 2z on a 2-dim module") {
    Rng rng(13);
    RelationModule m = RelationModule::init("R", 2, 2, rng);
    RelationModule::ForwardCache cache;
    const Vec z = m.forward(random_unit(rng, 2), &cache);
    // f = ||z||^2 has df/dz = 2z, and dz/db2 is the identity path
    Vec upstream(z);
    scale(upstream, 2.0);
    const auto g = m.backward(cache, upstream);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(g.b2[i] == doctest::Approx(2.0 * z[i]).epsilon(1e-12));
}

TEST_CASE("normalize_backward matches finite differences") {
    Rng rng(14);
    Vec v(6);
    for (double& x : v) x = rng.gaussian();
    Vec upstream(6);
    for (double& x : upstream) x = rng.gaussian();
    const Vec analytic = normalize_backward(v, upstream);
    const double h = 1e-6;
    for (std::size_t i = 0; i < v.size(); ++i) {
        Vec vp(v), vm(v);
        vp[i] += h;
        vm[i] -= h;
        const double fp = dot(upstream, normalized(vp));
        const double fm = dot(upstream, normalized(vm));
        const double fd = (fp - fm) / (2.0 * h);
        CHECK(analytic[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("lipschitz_upper_bound: identity and scalar matrices") {
    RelationModule m;
    m.relation = "R";
    m.d_in = m.d_out = 8;
    m.d_hidden = 8;
    m.b1 = Vec(8, 0.0);
    m.b2 = Vec(8, 0.0);
    m.w1 = identity(8);
    m.w2 = identity(8);
    CHECK(lipschitz_upper_bound(m) == doctest::Approx(1.0).epsilon(1e-5));
    m.w1 = identity(8, 2.0);
    m.w2 = identity(8, 3.0);
    CHECK(lipschitz_upper_bound(m) == doctest::Approx(6.0).epsilon(1e-5));
}

TEST_CASE("spectral_norm matches a Jacobi SVD oracle to 1e-5") {
    Rng rng(21);
    for (int trial = 0; trial < 4; ++trial) {
        Mat a(8, 8);
        for (double& x : a.a) x = rng.gaussian();
        const double want = svd_max_jacobi(a);
        const double got = spectral_norm(a);
        CHECK(std::abs(got - want) <= 1e-5 * std::max(1.0, want));
    }
}

TEST_CASE("lipschitz bound holds on 1000 random unit pairs") {
    Rng rng(31);
    RelationModule m = RelationModule::init("R", 16, 8, rng);
    const double bound = lipschitz_upper_bound(m);
    CHECK(bound > 0.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec u = random_unit(rng, 16);
        const Vec v = random_unit(rng, 16);
        Vec du = m.forward(u);
        axpy(-1.0, m.forward(v), du);
        Vec duv(u);
        axpy(-1.0, v, duv);
        CHECK(norm2(du) <= bound * norm2(duv) + 1e-12);
    }
}

TEST_CASE("adamw: zero gradient with zero decay is a no-op") {
    AdamwState st(3);
    Vec p{1.0, -2.0, 0.5};
    const Vec p0 = p;
    AdamwConfig cfg;
    cfg.weight_decay = 0.0;
    st.step(p, Vec(3, 0.0), cfg);
    CHECK(same_bits(p, p0));
}

TEST_CASE("adamw: bias-corrected first step moves by ~lr") {
    AdamwState st(1);
    Vec p{1.0};
    AdamwConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    st.step(p, Vec{1.0}, cfg);
    // mhat = vhat = 1 after correction, so p <- 1 - 0.1 * 1/(1 + eps)
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(st.steps() == 1);
}

TEST_CASE("adamw: weight decay is decoupled from the moments") {
    AdamwState st(1);
    Vec p{1.0};
    AdamwConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    st.step(p, Vec{0.0}, cfg);
    // zero gradient leaves the moments at zero; only decay acts
    CHECK(p[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK(st.m()[0] == 0.0);
    CHECK(st.v()[0] == 0.0);
}

TEST_CASE("adamw: shape changes are rejected") {
    AdamwState st(3);
    Vec p(4, 1.0);
    CHECK_THROWS_AS(st.step(p, Vec(4, 0.0), AdamwConfig{}), ShapeMismatch);
}

TEST_CASE("init: same seed gives bitwise-identical parameters") {
    Rng r1(42), r2(42);
    const RelationModule a = RelationModule::init("R", 32, 16, r1);
    const RelationModule b = RelationModule::init("R", 32, 16, r2);
    CHECK(same_bits(a.w1, b.w1));
    CHECK(same_bits(a.b1, b.b1));
    CHECK(same_bits(a.w2, b.w2));
    CHECK(same_bits(a.b2, b.b2));
    // biases start at zero, weights inside +-1/sqrt(fan_in)
    for (double v : a.b1) CHECK(v == 0.0);
    for (double v : a.b2) CHECK(v == 0.0);
    for (double v : a.w1.a) CHECK(std::abs(v) <= 1.0 / std::sqrt(32.0));
    for (double v : a.w2.a) CHECK(std::abs(v) <= 1.0 / std::sqrt(16.0));
}

TEST_CASE("parameter accounting") {
    Rng rng(5);
    const RelationModule m = RelationModule::init("R", 16, 8, rng);
    CHECK(m.param_count() == 2 * 16 * 8 + 8 + 16);
    CHECK(module_param_count(1, 16, 8) == m.param_count());
    CHECK(module_param_count(16, 512, 128) == 2107392);
}
