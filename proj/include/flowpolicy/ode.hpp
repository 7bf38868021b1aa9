#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowpolicy/numeric.hpp"
#include "flowpolicy/policy.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/samples.hpp"
#include "flowpolicy/schedule.hpp"

namespace flowpolicy {

struct RolloutConfig {
    double substep = 1.0 / 128;      // raw step size
    double window_dtau = 3.0 / 128;  // raw micro-window size; 0 disables
    double shift_m = 1.0;
    std::vector<double> segment_temperatures;  // empty => all 1.0
    bool record_trajectory = false;
};

// Per-segment GM temperatures: T everywhere, except the final segment stays
// at 1 unless on_final is set.
inline std::vector<double> temperature_schedule(double temperature, int nfe, bool on_final = false) {
    std::vector<double> ts(static_cast<std::size_t>(nfe), temperature);
    if (!ts.empty() && !on_final) ts.back() = 1.0;
    return ts;
}

struct Trajectory {
    enum class Source { Teacher, Policy, Mixed };
    Source source = Source::Policy;
    std::vector<double> taus;
    std::vector<double> ts;
    std::vector<Vec> states;

    void push(double tau, double t, const Vec& x) {
        taus.push_back(tau);
        ts.push_back(t);
        states.push_back(x);
    }
};

inline Vec euler_step(std::span<const double> x, std::span<const double> u, double h_t) {
    if (!(h_t >= 0.0)) throw std::invalid_argument("euler_step: step must be >= 0");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - h_t * u[i];
    return out;
}

namespace detail {

// Uniform raw substeps of size cfg.substep from from_tau down to to_tau, the
// final step possibly shorter. Velocities are queried at left endpoints with
// the shifted time clamped to the floor.
template <class VelocityFn>
Vec integrate_raw(VelocityFn&& velocity, Vec x, double from_tau, double to_tau, double substep, double shift_m,
                  Trajectory* traj) {
    if (to_tau > from_tau + 1e-12) throw std::invalid_argument("rollout: to_tau above from_tau");
    if (traj) traj->push(from_tau, shift_time(from_tau, shift_m), x);
    double span = from_tau - to_tau;
    if (span <= 1e-15) return x;
    long n_sub = static_cast<long>(std::ceil(span / substep - 1e-9));
    if (n_sub < 1) n_sub = 1;
    double t_hi = shift_time(from_tau, shift_m);
    for (long k = 0; k < n_sub; ++k) {
        double tau_lo = (k + 1 == n_sub) ? to_tau : from_tau - (k + 1) * substep;
        double t_lo = shift_time(tau_lo, shift_m);
        Vec u = velocity(x, std::max(t_hi, kTimeFloor));
        double h = t_hi - t_lo;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= h * u[i];
        if (!all_finite(x)) throw NumericalError("rollout: non-finite state", k);
        if (traj) traj->push(tau_lo, t_lo, x);
        t_hi = t_lo;
    }
    return x;
}

}  // namespace detail

struct RolloutResult {
    Vec endpoint;
    Trajectory trajectory;
};

inline RolloutResult rollout_policy(const PolicyHandle& policy, std::span<const double> from_state,
                                    double from_tau, double to_tau, const RolloutConfig& cfg) {
    if (from_tau > policy.tau_src + 1e-9 || to_tau < policy.tau_dst - 1e-9)
        throw std::domain_error("rollout: segment not covered by the policy window");
    RolloutResult res;
    Trajectory* traj = cfg.record_trajectory ? &res.trajectory : nullptr;
    res.endpoint = detail::integrate_raw(
        [&](const Vec& x, double t) { return policy.velocity(x, t); },
        Vec(from_state.begin(), from_state.end()), from_tau, to_tau, cfg.substep, cfg.shift_m, traj);
    return res;
}

// One state/time/weight entry of a micro-window rollout; weights are the
// shifted substep lengths normalized to sum to 1.
struct WindowSample {
    Vec x;
    double t;  // query time (floor-clamped)
    double weight;
};

// Left-endpoint states of the detached rollout over [tau - window, tau],
// truncated at tau_lo_clamp. Zero-length windows yield the single
// instantaneous sample.
inline std::vector<WindowSample> micro_window_states(const PolicyHandle& detached, std::span<const double> x_t,
                                                     double tau, double window_dtau, double tau_lo_clamp,
                                                     const RolloutConfig& cfg) {
    std::vector<WindowSample> out;
    double tau_end = std::max(tau - window_dtau, tau_lo_clamp);
    double span = tau - tau_end;
    double t_hi = shift_time(tau, cfg.shift_m);
    if (window_dtau <= 0.0 || span <= 1e-15) {
        out.push_back({Vec(x_t.begin(), x_t.end()), std::max(t_hi, kTimeFloor), 1.0});
        return out;
    }
    long n_sub = static_cast<long>(std::ceil(span / cfg.substep - 1e-9));
    if (n_sub < 1) n_sub = 1;
    Vec x(x_t.begin(), x_t.end());
    double total = t_hi - shift_time(tau_end, cfg.shift_m);
    for (long k = 0; k < n_sub; ++k) {
        double tau_lo = (k + 1 == n_sub) ? tau_end : tau - (k + 1) * cfg.substep;
        double t_lo = shift_time(tau_lo, cfg.shift_m);
        double h = t_hi - t_lo;
        double t_query = std::max(t_hi, kTimeFloor);
        out.push_back({x, t_query, h / total});
        Vec u = detached.velocity(x, t_query);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= h * u[i];
        if (!all_finite(x)) throw NumericalError("micro window: non-finite state", k);
        t_hi = t_lo;
    }
    return out;
}

// Average velocity over a micro window (left-Riemann, weighted by shifted
// substep lengths): (1/(t_a - t_b)) * integral of pi along its own rollout.
inline Vec micro_window_velocity(const PolicyHandle& policy, std::span<const double> x_t, double tau,
                                 double window_dtau, const RolloutConfig& cfg) {
    auto samples = micro_window_states(policy, x_t, tau, window_dtau, policy.tau_dst, cfg);
    Vec avg(x_t.size(), 0.0);
    for (const auto& s : samples) axpy(s.weight, policy.velocity(s.x, s.t), avg);
    return avg;
}

// ---------------------------------------------------------------------------
// Multi-segment sampling: one policy generation per segment, dense policy
// integration substeps in between.

using PolicyProvider = std::function<PolicyHandle(const Vec& x_src, double tau_src, double tau_dst)>;

struct SampleResult {
    Vec endpoint;
    int policy_generations = 0;
    std::vector<double> applied_temperatures;
    std::vector<Trajectory> trajectories;  // one per segment when recorded
};

inline SampleResult sample_one(const PolicyProvider& provider, const StepGrid& grid, const RolloutConfig& cfg,
                               Vec x1) {
    SampleResult res;
    if (!cfg.segment_temperatures.empty() &&
        cfg.segment_temperatures.size() != static_cast<std::size_t>(grid.segments()))
        throw std::invalid_argument("sample: temperature schedule length must match the step grid");
    Vec x = std::move(x1);
    for (int seg = 0; seg < grid.segments(); ++seg) {
        double tau_hi = grid.tau_hi(seg), tau_lo = grid.tau_lo(seg);
        PolicyHandle policy = provider(x, tau_hi, tau_lo);
        ++res.policy_generations;
        double temp = cfg.segment_temperatures.empty() ? 1.0 : cfg.segment_temperatures[static_cast<std::size_t>(seg)];
        if (temp != 1.0 && policy.kind == PolicyHandle::Kind::Gm) apply_temperature(policy.gm, temp);
        res.applied_temperatures.push_back(policy.kind == PolicyHandle::Kind::Gm ? temp : 1.0);
        RolloutResult roll = rollout_policy(policy, x, tau_hi, tau_lo, cfg);
        x = std::move(roll.endpoint);
        if (cfg.record_trajectory) res.trajectories.push_back(std::move(roll.trajectory));
    }
    res.endpoint = std::move(x);
    return res;
}

inline SampleResult sample(const PolicyProvider& provider, const StepGrid& grid, const RolloutConfig& cfg,
                           int dim, std::uint64_t seed, long index = 0) {
    return sample_one(provider, grid, cfg, draw_noise(dim, seed, index));
}

// Batch with per-sample counter streams: parallel execution over samples
// equals the sequential order sample-by-sample.
inline SampleSet sample_batch(const PolicyProvider& provider, const StepGrid& grid, const RolloutConfig& cfg,
                              int dim, long n, std::uint64_t seed) {
    SampleSet out;
    out.dim = dim;
    for (long i = 0; i < n; ++i) out.append(sample(provider, grid, cfg, dim, seed, i).endpoint);
    return out;
}

}  // namespace flowpolicy
