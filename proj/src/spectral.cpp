#include "kml/spectral.hpp"

#include <cmath>

#include "kml/rng.hpp"

namespace kml {

double spectral_norm(const Mat& A, double rel_tol, int max_iters, std::uint64_t seed) {
    if (A.rows == 0 || A.cols == 0) return 0.0;
    Rng rng(seed);
    Vec v(A.cols);
    for (double& x : v) x = rng.gaussian();
    double n = norm2(v);
    if (n == 0.0) v[0] = 1.0, n = 1.0;
    scale(v, 1.0 / n);

    double sigma = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Vec u = matvec(A, v);   // u = A v
        Vec w = matvec_t(A, u); // w = A^T A v
        const double wn = norm2(w);
        if (wn < 1e-300) return 0.0; // v is (numerically) in the null space
        scale(w, 1.0 / wn);
        v = std::move(w);
        const double next = norm2(matvec(A, v)); // sigma estimate at the new v
        if (it > 0 && std::abs(next - sigma) <= rel_tol * std::max(next, 1e-300)) {
            return next;
        }
        sigma = next;
    }
    return sigma;
}

double lipschitz_upper_bound(const RelationModule& m, double rel_tol, int max_iters) {
    return spectral_norm(m.w2, rel_tol, max_iters) * spectral_norm(m.w1, rel_tol, max_iters);
}

} // namespace kml
