#include "kml/gradcheck.hpp"

#include <cmath>

namespace kml {

namespace {

// straight-line forward, independent of RelationModule::forward
double eval_raw(const RelationModule& m, const Vec& x, const Vec& upstream) {
    double f = 0.0;
    for (std::size_t i = 0; i < m.d_out; ++i) {
        double zi = m.b2[i];
        for (std::size_t k = 0; k < m.d_hidden; ++k) {
            double ak = m.b1[k];
            for (std::size_t j = 0; j < m.d_in; ++j) ak += m.w1.at(k, j) * x[j];
            zi += m.w2.at(i, k) * std::tanh(ak);
        }
        f += upstream[i] * zi;
    }
    return f;
}

double err_of(double analytic, double fd) {
    const double mag = std::max(std::abs(analytic), std::abs(fd));
    const double diff = std::abs(analytic - fd);
    return mag < 1e-6 ? diff : diff / mag;
}

} // namespace

GradCheckReport gradcheck(const RelationModule& m, const Vec& x, const Vec& upstream, double h) {
    RelationModule probe = m;
    RelationModule::ForwardCache cache;
    probe.forward(x, &cache);
    const RelationModule::Grads g = probe.backward(cache, upstream);

    GradCheckReport rep;
    rep.step = h;

    auto check_span = [&](const char* tag, const double* analytic, double* params, std::size_t n,
                          const Vec* xv) {
        double worst = 0.0;
        Vec xp;
        for (std::size_t i = 0; i < n; ++i) {
            double saved;
            Vec const* eval_x = &x;
            if (xv) { // perturb a copy of the input instead of module params
                xp = *xv;
                saved = xp[i];
                xp[i] = saved + h;
                eval_x = &xp;
            } else {
                saved = params[i];
                params[i] = saved + h;
            }
            const double fp = eval_raw(probe, *eval_x, upstream);
            if (xv)
                xp[i] = saved - h;
            else
                params[i] = saved - h;
            const double fm = eval_raw(probe, *eval_x, upstream);
            if (xv)
                xp[i] = saved;
            else
                params[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, err_of(analytic[i], fd));
            ++rep.n_checked;
        }
        rep.per_tensor[tag] = worst;
        rep.max_rel_error = std::max(rep.max_rel_error, worst);
    };

    check_span("w1", g.w1.a.data(), probe.w1.a.data(), probe.w1.size(), nullptr);
    check_span("b1", g.b1.data(), probe.b1.data(), probe.b1.size(), nullptr);
    check_span("w2", g.w2.a.data(), probe.w2.a.data(), probe.w2.size(), nullptr);
    check_span("b2", g.b2.data(), probe.b2.data(), probe.b2.size(), nullptr);
    check_span("x", g.x.data(), nullptr, x.size(), &x);
    return rep;
}

} // namespace kml
