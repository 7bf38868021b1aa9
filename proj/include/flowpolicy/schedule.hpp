#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "flowpolicy/numeric.hpp"

namespace flowpolicy {

// Velocities are never evaluated below this time; the final ODE state at
// nominal t=0 is produced by the last Euler update from t >= kTimeFloor.
inline constexpr double kTimeFloor = 1e-4;

// Linear flow schedule: alpha(t) = 1 - t, sigma(t) = t.
struct Schedule {
    static double alpha(double t) { return 1.0 - t; }
    static double sigma(double t) { return t; }
};

// Raw-to-shifted time map t = m*tau / (1 + (m-1)*tau). Identity at m=1,
// fixed points at 0 and 1, strictly increasing for m > 0.
inline double shift_time(double tau, double m) {
    if (!(m > 0.0)) throw std::domain_error("shift_time: shift m must be > 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("shift_time: tau outside [0,1]");
    return m * tau / (1.0 + (m - 1.0) * tau);
}

// Step grid in raw time: 1 = tau_0 > tau_1 > ... > tau_nfe = 0, uniform
// intervals except the last one which is scaled by final_step_scale.
struct StepGrid {
    int nfe = 1;
    double final_step_scale = 1.0;
    std::vector<double> raw_boundaries;

    int segments() const { return nfe; }
    double tau_hi(int seg) const { return raw_boundaries[static_cast<std::size_t>(seg)]; }
    double tau_lo(int seg) const { return raw_boundaries[static_cast<std::size_t>(seg) + 1]; }
};

inline StepGrid make_step_grid(int nfe, double final_step_scale = 1.0) {
    if (nfe < 1) throw std::invalid_argument("make_step_grid: nfe must be >= 1");
    if (!(final_step_scale > 0.0 && final_step_scale <= 1.0))
        throw std::invalid_argument("make_step_grid: final_step_scale must be in (0,1]");
    StepGrid g;
    g.nfe = nfe;
    g.final_step_scale = final_step_scale;
    double h = 1.0 / (static_cast<double>(nfe) - 1.0 + final_step_scale);
    g.raw_boundaries.resize(static_cast<std::size_t>(nfe) + 1);
    for (int k = 0; k < nfe; ++k) g.raw_boundaries[static_cast<std::size_t>(k)] = 1.0 - k * h;
    g.raw_boundaries[0] = 1.0;
    g.raw_boundaries[static_cast<std::size_t>(nfe)] = 0.0;
    return g;
}

// x_t = alpha_t * x0 + sigma_t * eps
inline Vec forward_diffuse(std::span<const double> x0, std::span<const double> eps, double t) {
    if (x0.size() != eps.size()) throw std::invalid_argument("forward_diffuse: dimension mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("forward_diffuse: t outside [0,1]");
    Vec x(x0.size());
    double a = Schedule::alpha(t), s = Schedule::sigma(t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = a * x0[i] + s * eps[i];
    return x;
}

// u = (x_t - x0) / t. Under the linear schedule this equals eps - x0.
inline Vec sample_velocity(std::span<const double> x_t, std::span<const double> x0, double t) {
    if (x_t.size() != x0.size()) throw std::invalid_argument("sample_velocity: dimension mismatch");
    if (!(t >= kTimeFloor)) throw std::domain_error("sample_velocity: t below time floor");
    Vec u(x_t.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (x_t[i] - x0[i]) / t;
    return u;
}

}  // namespace flowpolicy
