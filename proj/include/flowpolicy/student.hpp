#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpolicy/gm.hpp"
#include "flowpolicy/numeric.hpp"
#include "flowpolicy/ode.hpp"
#include "flowpolicy/policy.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/schedule.hpp"

namespace flowpolicy {

// Policy generator network: a small tanh MLP mapping (x_src, t_src, c) to
// policy parameters through a DX or GM head.
struct StudentConfig {
    int dim = 2;
    std::vector<int> hidden = {256, 256, 256};
    int time_freqs = 16;  // sinusoidal embedding frequencies
    int n_classes = 0;    // 0 => no condition input
    enum class Head { Dx, Gm } head = Head::Gm;
    int dx_points = 10;                                // DX: N grid points
    int gm_chunks = 1, gm_components = 8, gm_chunk_dim = 2;  // GM: L, K, C

    int input_dim() const { return dim + 2 * time_freqs + n_classes; }
    int output_dim() const {
        if (head == Head::Dx) return dx_points * dim;
        return gm_chunks * (gm_components + gm_components * gm_chunk_dim) + 1;
    }
    std::vector<int> layer_sizes() const {
        std::vector<int> s;
        s.push_back(input_dim());
        for (int h : hidden) s.push_back(h);
        s.push_back(output_dim());
        return s;
    }
    long param_count() const {
        auto s = layer_sizes();
        long n = 0;
        for (std::size_t l = 0; l + 1 < s.size(); ++l) n += static_cast<long>(s[l + 1]) * (s[l] + 1);
        return n;
    }
    void validate() const {
        if (dim < 1) throw std::invalid_argument("student: dim must be >= 1");
        if (time_freqs < 1) throw std::invalid_argument("student: time_freqs must be >= 1");
        if (head == Head::Dx) {
            if (dx_points < 1) throw std::invalid_argument("student: dx head needs N >= 1");
        } else {
            if (gm_chunks * gm_chunk_dim != dim)
                throw std::invalid_argument("student: gm head needs L*C == dim");
            if (gm_components < 1) throw std::invalid_argument("student: gm head needs K >= 1");
        }
    }
};

struct TrainState {
    Vec params, adam_m, adam_v, ema_params;
    long iteration = 0;
    std::uint64_t seed = 0;
};

// Head init is all-zero: the GM head emits uniform logits, zero u-means and
// log_s = 0, so the initial policy is the identity denoiser anchored at x_src.
inline TrainState init_train_state(const StudentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TrainState st;
    st.seed = seed;
    st.params.assign(static_cast<std::size_t>(cfg.param_count()), 0.0);
    auto sizes = cfg.layer_sizes();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        std::size_t fan_in = static_cast<std::size_t>(sizes[l]);
        std::size_t fan_out = static_cast<std::size_t>(sizes[l + 1]);
        bool is_head = (l + 2 == sizes.size());
        if (!is_head) {
            Rng rng = substream(seed, RngUse::Init, l);
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (std::size_t i = 0; i < fan_in * fan_out; ++i) st.params[off + i] = rng.uniform(-limit, limit);
        }
        off += fan_out * (fan_in + 1);
    }
    st.adam_m.assign(st.params.size(), 0.0);
    st.adam_v.assign(st.params.size(), 0.0);
    st.ema_params = st.params;
    return st;
}

struct ForwardCache {
    Vec input;
    std::vector<Vec> activations;  // post-tanh per hidden layer
    Vec head_out;
};

namespace detail {

inline void student_input(const StudentConfig& cfg, std::span<const double> x_src, double t_src, int cond,
                          Vec& in) {
    in.assign(static_cast<std::size_t>(cfg.input_dim()), 0.0);
    for (int d = 0; d < cfg.dim; ++d) in[static_cast<std::size_t>(d)] = x_src[static_cast<std::size_t>(d)];
    for (int f = 0; f < cfg.time_freqs; ++f) {
        double w = 3.141592653589793 * std::pow(2.0, f);
        in[static_cast<std::size_t>(cfg.dim) + 2 * f] = std::sin(w * t_src);
        in[static_cast<std::size_t>(cfg.dim) + 2 * f + 1] = std::cos(w * t_src);
    }
    if (cfg.n_classes > 0) {
        if (cond < 0 || cond >= cfg.n_classes)
            throw std::invalid_argument("student: condition id outside [0, n_classes)");
        in[static_cast<std::size_t>(cfg.dim + 2 * cfg.time_freqs + cond)] = 1.0;
    }
}

inline void mlp_forward(const StudentConfig& cfg, std::span<const double> params, ForwardCache& cache) {
    auto sizes = cfg.layer_sizes();
    const Vec* a = &cache.input;
    cache.activations.assign(sizes.size() - 2, Vec{});
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        std::size_t in_n = static_cast<std::size_t>(sizes[l]);
        std::size_t out_n = static_cast<std::size_t>(sizes[l + 1]);
        bool is_head = (l + 2 == sizes.size());
        Vec& z = is_head ? cache.head_out : cache.activations[l];
        z.assign(out_n, 0.0);
        const double* W = params.data() + off;
        const double* b = W + in_n * out_n;
        for (std::size_t o = 0; o < out_n; ++o) {
            double s = b[o];
            const double* w_row = W + o * in_n;
            for (std::size_t i = 0; i < in_n; ++i) s += w_row[i] * (*a)[i];
            z[o] = is_head ? s : std::tanh(s);
        }
        a = &z;
        off += out_n * (in_n + 1);
    }
}

// Backpropagates d(head outputs) through the MLP, accumulating into grad.
inline void mlp_backward(const StudentConfig& cfg, std::span<const double> params, const ForwardCache& cache,
                         Vec d_out, std::span<double> grad) {
    auto sizes = cfg.layer_sizes();
    std::vector<std::size_t> offsets(sizes.size() - 1);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        offsets[l] = off;
        off += static_cast<std::size_t>(sizes[l + 1]) * (static_cast<std::size_t>(sizes[l]) + 1);
    }
    Vec delta = std::move(d_out);
    for (std::size_t li = sizes.size() - 1; li-- > 0;) {
        std::size_t in_n = static_cast<std::size_t>(sizes[li]);
        std::size_t out_n = static_cast<std::size_t>(sizes[li + 1]);
        const Vec& a_in = (li == 0) ? cache.input : cache.activations[li - 1];
        const double* W = params.data() + offsets[li];
        double* dW = grad.data() + offsets[li];
        double* db = dW + in_n * out_n;
        Vec d_in(in_n, 0.0);
        for (std::size_t o = 0; o < out_n; ++o) {
            double g = delta[o];
            db[o] += g;
            double* dw_row = dW + o * in_n;
            const double* w_row = W + o * in_n;
            for (std::size_t i = 0; i < in_n; ++i) {
                dw_row[i] += g * a_in[i];
                d_in[i] += g * w_row[i];
            }
        }
        if (li == 0) break;
        const Vec& a_prev = cache.activations[li - 1];
        for (std::size_t i = 0; i < in_n; ++i) d_in[i] *= 1.0 - a_prev[i] * a_prev[i];  // tanh'
        delta = std::move(d_in);
    }
}

}  // namespace detail

// Maps head outputs to a policy. GM head outputs are velocity-space logits,
// means and a shared log_s; DX head outputs are grid velocities reparameterized
// as x0hat_i = x_src - sigma_src * u_i.
inline PolicyHandle student_forward(const StudentConfig& cfg, std::span<const double> params,
                                    std::span<const double> x_src, double tau_src, double tau_dst,
                                    double shift_m, int cond = 0, ForwardCache* cache_out = nullptr) {
    if (static_cast<int>(x_src.size()) != cfg.dim) throw std::invalid_argument("student: x_src dimension mismatch");
    double t_src = shift_time(tau_src, shift_m);
    if (!(t_src > 0.0 && t_src <= 1.0)) throw std::domain_error("student: t_src outside (0,1]");
    ForwardCache local;
    ForwardCache& cache = cache_out ? *cache_out : local;
    detail::student_input(cfg, x_src, t_src, cond, cache.input);
    detail::mlp_forward(cfg, params, cache);
    if (!all_finite(cache.head_out)) throw NumericalError("student: non-finite network output", 0);

    if (cfg.head == StudentConfig::Head::Dx) {
        DxGrid grid;
        grid.n_points = cfg.dx_points;
        grid.dim = cfg.dim;
        grid.times = dx_grid_times(cfg.dx_points, tau_src, tau_dst, shift_m);
        grid.x0hat.resize(static_cast<std::size_t>(cfg.dx_points) * cfg.dim);
        double sig = Schedule::sigma(t_src);
        for (std::size_t i = 0; i < grid.x0hat.size(); ++i)
            grid.x0hat[i] = x_src[i % static_cast<std::size_t>(cfg.dim)] - sig * cache.head_out[i];
        return make_dx_policy_handle(std::move(grid), Vec(x_src.begin(), x_src.end()), tau_src, tau_dst, shift_m);
    }
    int L = cfg.gm_chunks, K = cfg.gm_components, C = cfg.gm_chunk_dim;
    std::size_t n_logits = static_cast<std::size_t>(L) * K;
    std::size_t n_means = n_logits * static_cast<std::size_t>(C);
    FactorGm gm = factor_gm_from_velocity_params(
        L, K, C, {cache.head_out.data(), n_logits}, {cache.head_out.data() + n_logits, n_means},
        cache.head_out[n_logits + n_means], x_src, t_src);
    return make_gm_policy_handle(std::move(gm), tau_src, tau_dst, shift_m);
}

// One velocity-matching point: either instantaneous at (x, t) or the
// micro-window average over precomputed detached-rollout states.
struct MatchPoint {
    Vec x;
    double t = 1.0;
    std::vector<WindowSample> window;  // empty => instantaneous
    Vec u_target;
    double weight = 1.0;
};

// One policy generation and its match points.
struct MatchItem {
    Vec x_src;
    double tau_src = 1.0, tau_dst = 0.0;
    int cond = 0;
    std::vector<MatchPoint> points;
};

namespace detail {

inline Vec policy_velocity_at(const PolicyHandle& policy, const MatchPoint& pt) {
    if (pt.window.empty()) return policy.velocity(pt.x, pt.t);
    Vec avg(pt.x.size(), 0.0);
    for (const auto& s : pt.window) axpy(s.weight, policy.velocity(s.x, s.t), avg);
    return avg;
}

inline void policy_param_backward_at(const PolicyHandle& policy, const MatchPoint& pt,
                                     std::span<const double> du, PolicyParamGrad& acc) {
    auto backward_one = [&](std::span<const double> x, double t, std::span<const double> cot) {
        if (policy.kind == PolicyHandle::Kind::Gm)
            gm_velocity_param_backward(policy.gm, x, t, cot, acc.d_logits, acc.d_means_u, acc.d_log_std);
        else
            dx_velocity_param_backward(policy.dx, policy.t_src, t, cot, acc.d_u_grid);
    };
    if (pt.window.empty()) {
        backward_one(pt.x, pt.t, du);
        return;
    }
    Vec scaled(du.size());
    for (const auto& s : pt.window) {
        for (std::size_t i = 0; i < du.size(); ++i) scaled[i] = s.weight * du[i];
        backward_one(s.x, s.t, scaled);
    }
}

}  // namespace detail

// loss = (1/normalizer) sum over items, points of weight * 1/2 ||u_target - pi||^2.
// The normalizer is the batch-element count (a sweep may contribute several
// items per element); 0 means one item per element. States are constants; the
// gradient flows through the policy parameters into the network weights.
inline double student_loss_and_grad(const StudentConfig& cfg, std::span<const double> params,
                                    std::span<const MatchItem> items, double shift_m, Vec& grad,
                                    long normalizer = 0) {
    grad.assign(params.size(), 0.0);
    if (items.empty()) return 0.0;
    if (normalizer <= 0) normalizer = static_cast<long>(items.size());
    double loss = 0.0;
    std::size_t n_logits = static_cast<std::size_t>(cfg.gm_chunks) * cfg.gm_components;
    std::size_t n_means = n_logits * static_cast<std::size_t>(cfg.gm_chunk_dim);
    for (const auto& item : items) {
        ForwardCache cache;
        PolicyHandle policy =
            student_forward(cfg, params, item.x_src, item.tau_src, item.tau_dst, shift_m, item.cond, &cache);
        PolicyParamGrad acc;
        acc.resize_for(policy);
        for (const auto& pt : item.points) {
            Vec u = detail::policy_velocity_at(policy, pt);
            Vec du(u.size());
            for (std::size_t i = 0; i < u.size(); ++i) {
                double diff = u[i] - pt.u_target[i];
                loss += 0.5 * pt.weight * diff * diff;
                du[i] = pt.weight * diff;
            }
            detail::policy_param_backward_at(policy, pt, du, acc);
        }
        Vec d_head;
        if (cfg.head == StudentConfig::Head::Gm) {
            d_head.reserve(n_logits + n_means + 1);
            d_head.insert(d_head.end(), acc.d_logits.begin(), acc.d_logits.end());
            d_head.insert(d_head.end(), acc.d_means_u.begin(), acc.d_means_u.end());
            d_head.push_back(acc.d_log_std);
        } else {
            d_head = acc.d_u_grid;
        }
        detail::mlp_backward(cfg, params, cache, std::move(d_head), grad);
    }
    double inv = 1.0 / static_cast<double>(normalizer);
    loss *= inv;
    for (auto& g : grad) g *= inv;
    if (!std::isfinite(loss) || !all_finite(grad)) throw NumericalError("student: non-finite loss or gradient", 0);
    return loss;
}

// phi <- Adam(phi, grad); state.iteration must already count this step (>= 1).
inline void adam_step(TrainState& state, std::span<const double> grad, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    if (state.iteration < 1) throw std::logic_error("adam_step: iteration must be >= 1");
    adam_update(state.params, state.adam_m, state.adam_v, grad, state.iteration, lr, beta1, beta2, eps);
}

// EMA with the power-function schedule beta_t = (1 - 1/t)^(gamma+1), gamma = 7.
inline void ema_update(TrainState& state, double gamma = 7.0) {
    if (state.iteration < 1) throw std::logic_error("ema_update: iteration must be >= 1");
    double beta = std::pow(1.0 - 1.0 / static_cast<double>(state.iteration), gamma + 1.0);
    for (std::size_t i = 0; i < state.params.size(); ++i)
        state.ema_params[i] = beta * state.ema_params[i] + (1.0 - beta) * state.params[i];
}

// Sampling provider over fixed parameters (typically the EMA weights).
inline PolicyProvider make_student_provider(StudentConfig cfg, Vec params, double shift_m, int cond) {
    return [cfg = std::move(cfg), params = std::move(params), shift_m, cond](
               const Vec& x_src, double tau_src, double tau_dst) {
        return student_forward(cfg, params, x_src, tau_src, tau_dst, shift_m, cond);
    };
}

}  // namespace flowpolicy
