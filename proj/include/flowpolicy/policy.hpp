#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowpolicy/gm.hpp"
#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/schedule.hpp"

namespace flowpolicy {

// Grid of denoised-point estimates at fixed shifted times, interpolated
// linearly in t and clamped to the nearest endpoint outside the grid.
struct DxGrid {
    int n_points = 0;  // N
    int dim = 0;       // D
    Vec times;         // N shifted times, ascending
    Vec x0hat;         // N*D

    std::span<const double> point(int i) const {
        return {x0hat.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
};

namespace detail {

// Returns bracketing indices and interpolation weight for time t.
struct DxBracket {
    int lo, hi;
    double frac;  // weight of hi
};

inline DxBracket dx_bracket(const DxGrid& grid, double t) {
    int n = grid.n_points;
    if (n == 1 || t <= grid.times.front()) return {0, 0, 0.0};
    if (t >= grid.times.back()) return {n - 1, n - 1, 0.0};
    int hi = 1;
    while (grid.times[static_cast<std::size_t>(hi)] < t) ++hi;
    int lo = hi - 1;
    double span = grid.times[static_cast<std::size_t>(hi)] - grid.times[static_cast<std::size_t>(lo)];
    return {lo, hi, (t - grid.times[static_cast<std::size_t>(lo)]) / span};
}

}  // namespace detail

inline Vec dx_interpolate(const DxGrid& grid, double t) {
    auto b = detail::dx_bracket(grid, t);
    Vec x0(static_cast<std::size_t>(grid.dim));
    auto lo = grid.point(b.lo), hi = grid.point(b.hi);
    for (int d = 0; d < grid.dim; ++d)
        x0[static_cast<std::size_t>(d)] = (1.0 - b.frac) * lo[static_cast<std::size_t>(d)] + b.frac * hi[static_cast<std::size_t>(d)];
    return x0;
}

// pi(x_t, t) = (x_t - x0hat(t)) / t. The x0hat term does not adapt to x_t.
inline Vec dx_velocity(const DxGrid& grid, std::span<const double> x_t, double t) {
    if (static_cast<int>(x_t.size()) != grid.dim) throw std::invalid_argument("dx_velocity: dimension mismatch");
    if (!(t >= kTimeFloor)) throw std::domain_error("dx_velocity: t below time floor");
    Vec x0 = dx_interpolate(grid, t);
    Vec u(x_t.size());
    for (std::size_t d = 0; d < u.size(); ++d) u[d] = (x_t[d] - x0[d]) / t;
    return u;
}

// A network-free velocity function valid on one trajectory segment
// [tau_dst, tau_src], anchored at its origin state.
struct PolicyHandle {
    enum class Kind { Dx, Gm } kind = Kind::Gm;
    DxGrid dx;
    FactorGm gm;
    Vec x_src;
    double t_src = 1.0, t_dst = 0.0;      // shifted window
    double tau_src = 1.0, tau_dst = 0.0;  // raw window

    int dim() const { return kind == Kind::Dx ? dx.dim : gm.dim(); }

    double query_floor() const { return std::max(t_dst, kTimeFloor); }

    void check_window(double t) const {
        if (t < query_floor() - 1e-9 || t > t_src + 1e-9)
            throw std::domain_error("policy: velocity query outside window [t_dst, t_src]");
    }

    Vec velocity(std::span<const double> x_t, double t) const {
        check_window(t);
        if (kind == Kind::Dx) return dx_velocity(dx, x_t, t);
        return gm.discrete() ? gm_velocity_discrete(gm, x_t, t) : gm_velocity(gm, x_t, t);
    }
};

inline PolicyHandle make_gm_policy_handle(FactorGm gm, double tau_src, double tau_dst, double shift_m) {
    PolicyHandle h;
    h.kind = PolicyHandle::Kind::Gm;
    h.x_src = gm.x_src;
    h.t_src = gm.t_src;
    h.t_dst = shift_time(tau_dst, shift_m);
    h.tau_src = tau_src;
    h.tau_dst = tau_dst;
    h.gm = std::move(gm);
    return h;
}

inline PolicyHandle make_dx_policy_handle(DxGrid grid, Vec x_src, double tau_src, double tau_dst, double shift_m) {
    PolicyHandle h;
    h.kind = PolicyHandle::Kind::Dx;
    h.dx = std::move(grid);
    h.x_src = std::move(x_src);
    h.t_src = shift_time(tau_src, shift_m);
    h.t_dst = shift_time(tau_dst, shift_m);
    h.tau_src = tau_src;
    h.tau_dst = tau_dst;
    return h;
}

// DX grid times: N points evenly spaced in raw tau over [tau_dst, tau_src],
// then shifted. For N = 1 the single point sits at tau_src.
inline Vec dx_grid_times(int n_points, double tau_src, double tau_dst, double shift_m) {
    Vec times(static_cast<std::size_t>(n_points));
    if (n_points == 1) {
        times[0] = shift_time(tau_src, shift_m);
        return times;
    }
    for (int i = 0; i < n_points; ++i) {
        double tau = tau_dst + (tau_src - tau_dst) * static_cast<double>(i) / (n_points - 1);
        times[static_cast<std::size_t>(i)] = shift_time(tau, shift_m);
    }
    return times;
}

// ---------------------------------------------------------------------------
// Reverse-mode gradients of velocity outputs w.r.t. policy parameters. States
// (x_t) are constants; gradients flow only through the parameters.

// Gradient accumulator in head-output coordinates (velocity-space parameters).
struct PolicyParamGrad {
    Vec d_logits;   // GM: L*K
    Vec d_means_u;  // GM: L*K*C (velocity-space means)
    double d_log_std = 0.0;
    Vec d_u_grid;   // DX: N*D (raw grid velocities)

    void resize_for(const PolicyHandle& h) {
        if (h.kind == PolicyHandle::Kind::Gm) {
            d_logits.assign(h.gm.logits.size(), 0.0);
            d_means_u.assign(h.gm.means.size(), 0.0);
            d_log_std = 0.0;
        } else {
            d_u_grid.assign(h.dx.x0hat.size(), 0.0);
        }
    }
};

// Accumulates dL/d(params) of the GM policy velocity at (x_t, t), given the
// cotangent du = dL/du. Gradients are produced directly in velocity-space
// coordinates (chain through mu_x = x_src - sigma_src * mu).
inline void gm_velocity_param_backward(const FactorGm& gm, std::span<const double> x_t, double t,
                                       std::span<const double> du, Vec& d_logits, Vec& d_means_u,
                                       double& d_log_std) {
    detail::check_posterior_times(t, gm.t_src);
    int K = gm.n_components, C = gm.chunk_dim;
    double var_x = gm.variance();
    double sig_src = Schedule::sigma(gm.t_src);
    PosteriorGm post;
    Vec w(static_cast<std::size_t>(K)), dw(static_cast<std::size_t>(K)), dmu(static_cast<std::size_t>(K) * C);
    double d_var_total = 0.0;
    for (int i = 0; i < gm.n_chunks; ++i) {
        const double* xs = gm.x_src.data() + static_cast<std::size_t>(i) * C;
        const double* xt = x_t.data() + static_cast<std::size_t>(i) * C;
        const double* means = gm.means.data() + static_cast<std::size_t>(i) * K * C;
        detail::posterior_core(K, C, gm.logits.data() + static_cast<std::size_t>(i) * K, means, var_x, xs,
                               gm.t_src, xt, t, post);
        softmax(post.logits, w);
        double q = var_x * post.zeta + 1.0;

        // dp = -du/t ; dmu'_k = w_k dp ; dw_k = mu'_k . dp
        double d_q = 0.0, d_var = 0.0;
        double weighted = 0.0;
        for (int k = 0; k < K; ++k) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                double dp_c = -du[static_cast<std::size_t>(i) * C + c] / t;
                dmu[static_cast<std::size_t>(k) * C + c] = w[static_cast<std::size_t>(k)] * dp_c;
                s += post.means[static_cast<std::size_t>(k) * C + c] * dp_c;
            }
            dw[static_cast<std::size_t>(k)] = s;
            weighted += w[static_cast<std::size_t>(k)] * s;
        }
        for (int k = 0; k < K; ++k) {
            double db_k = w[static_cast<std::size_t>(k)] * (dw[static_cast<std::size_t>(k)] - weighted);
            d_logits[static_cast<std::size_t>(i) * K + k] += db_k;
            // g_k = n_k / q with n_k = M_k.(nu - zeta/2 M_k)
            const double* mk = means + static_cast<std::size_t>(k) * C;
            double g_k = post.logits[static_cast<std::size_t>(k)] - gm.logits[static_cast<std::size_t>(i) * K + k];
            d_q -= db_k * g_k / q;
            for (int c = 0; c < C; ++c) {
                double dM = db_k * (post.nu[static_cast<std::size_t>(c)] - post.zeta * mk[c]) / q;
                dM += dmu[static_cast<std::size_t>(k) * C + c] / q;
                // chain: M = x_src - sigma_src * mu  =>  d mu = -sigma_src * dM
                d_means_u[(static_cast<std::size_t>(i) * K + k) * C + c] -= sig_src * dM;
                d_var += dmu[static_cast<std::size_t>(k) * C + c] * post.nu[static_cast<std::size_t>(c)] / q;
                d_q -= dmu[static_cast<std::size_t>(k) * C + c] * post.means[static_cast<std::size_t>(k) * C + c] / q;
            }
        }
        d_var += post.zeta * d_q;
        d_var_total += d_var;
    }
    // var_x = sigma_src^2 exp(2 log_s); log_std is shared across chunks.
    d_log_std += 2.0 * var_x * d_var_total;
}

// Same for the DX policy: cotangent du accumulates into raw grid velocities
// (x0hat_i = x_src - sigma_src * u_i).
inline void dx_velocity_param_backward(const DxGrid& grid, double t_src, double t, std::span<const double> du,
                                       Vec& d_u_grid) {
    auto b = detail::dx_bracket(grid, t);
    double sig_src = Schedule::sigma(t_src);
    for (int d = 0; d < grid.dim; ++d) {
        double dx0 = -du[static_cast<std::size_t>(d)] / t;  // u = (x_t - x0hat)/t
        d_u_grid[static_cast<std::size_t>(b.lo) * grid.dim + d] += -sig_src * (1.0 - b.frac) * dx0;
        if (b.hi != b.lo) d_u_grid[static_cast<std::size_t>(b.hi) * grid.dim + d] += -sig_src * b.frac * dx0;
    }
}

// ---------------------------------------------------------------------------
// Direct GM policy fitting ("overfit one trajectory"): gradient descent on
// velocity-space logits/means/log_std to match a list of (t, x_t, u_t).

struct ToyfitTarget {
    double t = 1.0;  // shifted
    Vec x;           // L*C
    Vec u;           // L*C
};

struct ToyfitReport {
    double residual_mse = 0.0;  // mean over all scalar velocity components
    bool diverged = false;
    long diverged_at = -1;
    long iterations = 0;
};

struct ToyfitResult {
    FactorGm policy;
    ToyfitReport report;
};

inline double toyfit_residual(const FactorGm& gm, std::span<const ToyfitTarget> targets) {
    double sq = 0.0;
    for (const auto& tr : targets) {
        Vec u = gm_velocity(gm, tr.x, tr.t);
        sq += squared_distance(u, tr.u);
    }
    return sq / (static_cast<double>(targets.size()) * static_cast<double>(targets.front().u.size()));
}

inline ToyfitResult toyfit(std::span<const ToyfitTarget> targets, int K, int C, int L, long iters, double lr,
                           std::uint64_t seed, double t_src = 1.0) {
    if (targets.empty()) throw std::invalid_argument("toyfit: no targets");
    if (K < 1) throw std::invalid_argument("toyfit: K must be >= 1");
    for (std::size_t a = 0; a < targets.size(); ++a) {
        if (static_cast<int>(targets[a].x.size()) != L * C || targets[a].u.size() != targets[a].x.size())
            throw std::invalid_argument("toyfit: target dimension mismatch");
        if (targets[a].t > t_src + 1e-12 || targets[a].t < kTimeFloor)
            throw std::invalid_argument("toyfit: target time outside (t_floor, t_src]");
        for (std::size_t b = a + 1; b < targets.size(); ++b)
            if (targets[a].t == targets[b].t) throw std::invalid_argument("toyfit: target times must be distinct");
    }

    std::size_t n_logits = static_cast<std::size_t>(L) * K;
    std::size_t n_means = n_logits * static_cast<std::size_t>(C);
    std::size_t n_params = n_logits + n_means + 1;
    Vec params(n_params, 0.0);
    Vec x_src(static_cast<std::size_t>(L) * C, 0.0);

    // Mode init: velocity means pointing at the implied denoised points
    // x0 = x - t*u of the targets (cycled), plus jitter. Zero-centered init
    // tends to collapse all modes into one basin.
    Rng init = substream(seed, RngUse::Toyfit);
    double sig_src = Schedule::sigma(t_src);
    for (int i = 0; i < L; ++i)
        for (int k = 0; k < K; ++k) {
            const auto& tg = targets[static_cast<std::size_t>(k) % targets.size()];
            for (int c = 0; c < C; ++c) {
                std::size_t d = static_cast<std::size_t>(i) * C + c;
                double x0 = tg.x[d] - tg.t * tg.u[d];
                params[n_logits + (static_cast<std::size_t>(i) * K + k) * C + c] =
                    (x_src[d] - x0) / sig_src + 0.25 * init.normal();
            }
        }
    auto build = [&](const Vec& p) {
        return factor_gm_from_velocity_params(L, K, C, {p.data(), n_logits},
                                              {p.data() + n_logits, n_means}, p[n_params - 1], x_src, t_src);
    };

    Vec grad(n_params), m(n_params, 0.0), v(n_params, 0.0);
    Vec d_logits, d_means;
    ToyfitResult res;
    for (long it = 1; it <= iters; ++it) {
        FactorGm gm = build(params);
        std::fill(grad.begin(), grad.end(), 0.0);
        d_logits.assign(n_logits, 0.0);
        d_means.assign(n_means, 0.0);
        double d_log_std = 0.0;
        double loss = 0.0;
        for (const auto& tr : targets) {
            Vec u = gm_velocity(gm, tr.x, tr.t);
            Vec du(u.size());
            for (std::size_t d = 0; d < u.size(); ++d) {
                double diff = u[d] - tr.u[d];
                loss += diff * diff;
                du[d] = 2.0 * diff;
            }
            gm_velocity_param_backward(gm, tr.x, tr.t, du, d_logits, d_means, d_log_std);
        }
        if (!std::isfinite(loss)) {
            res.report.diverged = true;
            res.report.diverged_at = it;
            break;
        }
        std::copy(d_logits.begin(), d_logits.end(), grad.begin());
        std::copy(d_means.begin(), d_means.end(), grad.begin() + static_cast<long>(n_logits));
        grad[n_params - 1] = d_log_std;
        adam_update(params, m, v, grad, it, lr, 0.9, 0.999, 1e-8);
        res.report.iterations = it;
    }
    res.policy = build(params);
    if (!res.report.diverged) res.report.residual_mse = toyfit_residual(res.policy, targets);
    return res;
}

}  // namespace flowpolicy
