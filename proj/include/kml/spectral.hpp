#pragma once

#include "kml/linalg.hpp"
#include "kml/relation_module.hpp"

namespace kml {

// Largest singular value via power iteration on A^T A. Seeded start vector,
// relative tolerance on the Rayleigh quotient, hard iteration cap: the same
// inputs always produce the same estimate.
double spectral_norm(const Mat& A, double rel_tol = 1e-6, int max_iters = 500,
                     std::uint64_t seed = 0x5eed);

// Upper bound on the Lipschitz constant of x -> W2 tanh(W1 x + b1) + b2
// w.r.t. the euclidean norm: ||W2||_2 * ||W1||_2 (tanh is 1-Lipschitz).
double lipschitz_upper_bound(const RelationModule& m, double rel_tol = 1e-6,
                             int max_iters = 500);

} // namespace kml
