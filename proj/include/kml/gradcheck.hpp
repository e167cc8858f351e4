#pragma once

#include <map>
#include <string>

#include "kml/relation_module.hpp"

namespace kml {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::map<std::string, double> per_tensor; // w1, b1, w2, b2, x
    double step = 0.0;
    std::size_t n_checked = 0;
};

// Central-difference check of backward() for the scalar f = upstream . z(x).
// The finite-difference side evaluates a straight-line re-implementation of
// the forward map, so it is an independent oracle for forward and backward
// at once. Errors are relative (|a-f| / max|.|) above 1e-6 magnitude and
// absolute below, which keeps finite-difference noise out of the verdict.
GradCheckReport gradcheck(const RelationModule& m, const Vec& x, const Vec& upstream,
                          double h = 1e-5);

} // namespace kml
