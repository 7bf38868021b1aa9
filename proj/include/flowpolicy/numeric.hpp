#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowpolicy {

using Vec = std::vector<double>;

// Thrown when a computation produces non-finite values; carries the step or
// iteration index at which the blow-up was detected.
struct NumericalError : std::runtime_error {
    long index;
    NumericalError(const std::string& what, long idx)
        : std::runtime_error(what + " (at index " + std::to_string(idx) + ")"), index(idx) {}
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Max-subtracted log-sum-exp. -inf entries are ignored; all -inf yields -inf.
inline double log_sum_exp(std::span<const double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double a : logits) m = std::max(m, a);
    if (std::isinf(m) && m < 0) return m;
    double s = 0.0;
    for (double a : logits) s += std::exp(a - m);
    return m + std::log(s);
}

inline void softmax(std::span<const double> logits, std::span<double> out) {
    double lse = log_sum_exp(logits);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double a = logits[i];
        out[i] = (std::isinf(a) && a < 0) ? 0.0 : std::exp(a - lse);
    }
}

inline Vec softmax(std::span<const double> logits) {
    Vec out(logits.size());
    softmax(logits, out);
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// y += c * x
inline void axpy(double c, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

// Textbook Adam with bias correction, no weight decay. t counts from 1.
inline void adam_update(std::span<double> params, std::span<double> m, std::span<double> v,
                        std::span<const double> grad, long t, double lr, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8) {
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

}  // namespace flowpolicy
