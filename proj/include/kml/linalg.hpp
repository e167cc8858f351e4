#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kml/errors.hpp"

namespace kml {

using Vec = std::vector<double>;

// Dense row-major matrix over double. Deliberately minimal: the engine only
// needs gemv in both orientations, outer-product accumulation and norms.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }
    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    std::size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

inline double dot(const Vec& x, const Vec& y) {
    assert(x.size() == y.size());
    return dot(x.data(), y.data(), x.size());
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(Vec& x, double alpha) {
    for (double& v : x) v *= alpha;
}

// x / ||x||; the caller decides what a near-zero norm means
inline Vec normalized(const Vec& x, double floor = 1e-12) {
    const double n = norm2(x);
    if (n < floor) throw DegenerateOutput("vector norm " + std::to_string(n) + " below " + std::to_string(floor));
    Vec out(x);
    scale(out, 1.0 / n);
    return out;
}

// y = A x
inline Vec matvec(const Mat& A, const Vec& x) {
    if (x.size() != A.cols) throw ShapeMismatch("matvec: " + std::to_string(A.cols) + " cols vs x " + std::to_string(x.size()));
    Vec y(A.rows, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) y[i] = dot(A.row(i), x.data(), A.cols);
    return y;
}

// y = A^T x
inline Vec matvec_t(const Mat& A, const Vec& x) {
    if (x.size() != A.rows) throw ShapeMismatch("matvec_t: " + std::to_string(A.rows) + " rows vs x " + std::to_string(x.size()));
    Vec y(A.cols, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* r = A.row(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < A.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

// A += alpha * u v^T
inline void outer_acc(Mat& A, double alpha, const Vec& u, const Vec& v) {
    if (u.size() != A.rows || v.size() != A.cols) throw ShapeMismatch("outer_acc shape");
    for (std::size_t i = 0; i < A.rows; ++i) {
        double* r = A.row(i);
        const double s = alpha * u[i];
        for (std::size_t j = 0; j < A.cols; ++j) r[j] += s * v[j];
    }
}

} // namespace kml
