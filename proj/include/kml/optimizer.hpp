#pragma once

#include <cstdint>
#include <vector>

#include "kml/errors.hpp"
#include "kml/linalg.hpp"

namespace kml {

struct AdamwConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW over one flat parameter tensor. Weight decay is decoupled: applied
// directly to the parameters, never mixed into the moment estimates.
class AdamwState {
public:
    explicit AdamwState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    std::int64_t steps() const { return t_; }
    const Vec& m() const { return m_; }
    const Vec& v() const { return v_; }

    void step(double* params, const double* grads, std::size_t n, const AdamwConfig& cfg) {
        if (n != m_.size()) throw ShapeMismatch("adamw: tensor size changed");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < n; ++i) {
            m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grads[i];
            v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * params[i]);
        }
    }

    void step(Vec& params, const Vec& grads, const AdamwConfig& cfg) {
        if (params.size() != grads.size()) throw ShapeMismatch("adamw: params vs grads");
        step(params.data(), grads.data(), params.size(), cfg);
    }

    void step(Mat& params, const Mat& grads, const AdamwConfig& cfg) {
        if (params.rows != grads.rows || params.cols != grads.cols)
            throw ShapeMismatch("adamw: matrix shape");
        step(params.a.data(), grads.a.data(), params.a.size(), cfg);
    }

private:
    Vec m_, v_;
    std::int64_t t_ = 0;
};

} // namespace kml
