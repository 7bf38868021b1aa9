#pragma once

#include <cassert>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/schedule.hpp"

namespace flowpolicy {

// Parameter space of a mixture: velocity (u) as emitted by a student head,
// or data (x0) as required by the posterior update.
enum class GmSpace { Velocity, Data };

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Isotropic Gaussian mixture over one C-dimensional chunk. Weights are held
// as unnormalized logits and normalized lazily via log-sum-exp; a'_k grows
// like mu_x . nu which overflows naive exponentiation near small t.
// log_std = -inf encodes the discrete-support (std = 0) mode.
struct IsoGm {
    int n_components = 0;  // K
    int chunk_dim = 0;     // C
    Vec logits;            // K
    Vec means;             // K*C, row-major [k][c]
    double log_std = 0.0;
    GmSpace space = GmSpace::Velocity;

    bool discrete() const { return std::isinf(log_std) && log_std < 0.0; }
    double std_dev() const { return std::exp(log_std); }
    double variance() const { return std::exp(2.0 * log_std); }
    Vec weights() const { return softmax(logits); }
    std::span<const double> mean(int k) const {
        return {means.data() + static_cast<std::size_t>(k) * chunk_dim, static_cast<std::size_t>(chunk_dim)};
    }
};

// Velocity-space -> data-space reparameterization at the origin (x_src, t_src):
// mu_x_k = x_src - sigma_src * mu_k, s_x = sigma_src * s.
inline IsoGm u_to_x0(const IsoGm& gm, std::span<const double> x_src_chunk, double t_src) {
    if (gm.space != GmSpace::Velocity) throw std::invalid_argument("u_to_x0: mixture is not in velocity space");
    if (!(t_src > 0.0 && t_src <= 1.0)) throw std::domain_error("u_to_x0: t_src outside (0,1]");
    if (static_cast<int>(x_src_chunk.size()) != gm.chunk_dim)
        throw std::invalid_argument("u_to_x0: chunk dimension mismatch");
    IsoGm out = gm;
    double sig = Schedule::sigma(t_src);
    for (int k = 0; k < gm.n_components; ++k)
        for (int c = 0; c < gm.chunk_dim; ++c) {
            std::size_t i = static_cast<std::size_t>(k) * gm.chunk_dim + c;
            out.means[i] = x_src_chunk[static_cast<std::size_t>(c)] - sig * gm.means[i];
        }
    out.log_std = gm.log_std + std::log(sig);
    out.space = GmSpace::Data;
    return out;
}

// Denoising posterior of a data-space chunk mixture anchored at (x_src, t_src),
// conditioned on (x_t, t). Holds unnormalized logits.
struct PosteriorGm {
    int n_components = 0;
    int chunk_dim = 0;
    Vec logits;    // K, unnormalized
    Vec means;     // K*C
    double var = 0.0;
    Vec nu;        // C
    double zeta = 0.0;

    Vec weights() const { return softmax(logits); }
    Vec mean() const {
        Vec w = weights();
        Vec m(static_cast<std::size_t>(chunk_dim), 0.0);
        for (int k = 0; k < n_components; ++k)
            for (int c = 0; c < chunk_dim; ++c)
                m[static_cast<std::size_t>(c)] += w[static_cast<std::size_t>(k)] * means[static_cast<std::size_t>(k) * chunk_dim + c];
        return m;
    }
};

namespace detail {

// Shared posterior update. With var_x = 0 this is the discrete-support form.
//   nu    = alpha_t x_t / sigma_t^2 - alpha_src x_src / sigma_src^2
//   zeta  = alpha_t^2 / sigma_t^2 - alpha_src^2 / sigma_src^2
//   q     = var_x * zeta + 1
//   s'^2  = var_x / q
//   mu'_k = (var_x * nu + mu_x_k) / q
//   a'_k  = a_k + mu_x_k . (nu - zeta/2 * mu_x_k) / q
inline void posterior_core(int K, int C, const double* logits, const double* means, double var_x,
                           const double* x_src, double t_src, const double* x_t, double t,
                           PosteriorGm& out) {
    double a_t = Schedule::alpha(t), s_t = Schedule::sigma(t);
    double a_s = Schedule::alpha(t_src), s_s = Schedule::sigma(t_src);
    double it2 = 1.0 / (s_t * s_t), is2 = 1.0 / (s_s * s_s);
    double zeta = a_t * a_t * it2 - a_s * a_s * is2;
    assert(zeta >= -1e-9 && "posterior: zeta < 0 means t > t_src, a caller bug");
    if (zeta < 0.0) zeta = 0.0;
    out.n_components = K;
    out.chunk_dim = C;
    out.zeta = zeta;
    out.nu.resize(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c)
        out.nu[static_cast<std::size_t>(c)] = a_t * x_t[c] * it2 - a_s * x_src[c] * is2;
    double q = var_x * zeta + 1.0;
    out.var = var_x / q;
    out.logits.resize(static_cast<std::size_t>(K));
    out.means.resize(static_cast<std::size_t>(K) * C);
    for (int k = 0; k < K; ++k) {
        const double* mk = means + static_cast<std::size_t>(k) * C;
        double g = 0.0;
        for (int c = 0; c < C; ++c) g += mk[c] * (out.nu[static_cast<std::size_t>(c)] - 0.5 * zeta * mk[c]);
        out.logits[static_cast<std::size_t>(k)] = logits[k] + g / q;
        for (int c = 0; c < C; ++c)
            out.means[static_cast<std::size_t>(k) * C + c] = (var_x * out.nu[static_cast<std::size_t>(c)] + mk[c]) / q;
    }
}

inline void check_posterior_times(double t, double t_src) {
    if (t > t_src + 1e-12) throw std::domain_error("gm_posterior: policy queried before its origin (t > t_src)");
    if (t < kTimeFloor) throw std::domain_error("gm_posterior: t below time floor");
}

}  // namespace detail

inline PosteriorGm gm_posterior(const IsoGm& gm_x0, std::span<const double> x_src_chunk, double t_src,
                                std::span<const double> x_t_chunk, double t) {
    if (gm_x0.space != GmSpace::Data) throw std::invalid_argument("gm_posterior: mixture is not in data space");
    detail::check_posterior_times(t, t_src);
    PosteriorGm out;
    detail::posterior_core(gm_x0.n_components, gm_x0.chunk_dim, gm_x0.logits.data(), gm_x0.means.data(),
                           gm_x0.variance(), x_src_chunk.data(), t_src, x_t_chunk.data(), t, out);
    return out;
}

// Factorized mixture over L chunks of C channels, in data space, anchored at
// its origin state. All chunks share K, C and a single scalar std.
struct FactorGm {
    int n_chunks = 0;      // L
    int n_components = 0;  // K
    int chunk_dim = 0;     // C
    Vec logits;            // L*K
    Vec means;             // L*K*C
    double log_std = 0.0;  // shared, data-space
    Vec x_src;             // L*C
    double t_src = 1.0;

    int dim() const { return n_chunks * chunk_dim; }
    bool discrete() const { return std::isinf(log_std) && log_std < 0.0; }
    double variance() const { return std::exp(2.0 * log_std); }

    IsoGm chunk(int i) const {
        IsoGm g;
        g.n_components = n_components;
        g.chunk_dim = chunk_dim;
        g.log_std = log_std;
        g.space = GmSpace::Data;
        std::size_t lk = static_cast<std::size_t>(i) * n_components;
        g.logits.assign(logits.begin() + lk, logits.begin() + lk + n_components);
        std::size_t lkc = lk * chunk_dim;
        g.means.assign(means.begin() + lkc, means.begin() + lkc + static_cast<std::size_t>(n_components) * chunk_dim);
        return g;
    }

    std::span<const double> x_src_chunk(int i) const {
        return {x_src.data() + static_cast<std::size_t>(i) * chunk_dim, static_cast<std::size_t>(chunk_dim)};
    }
};

// Assemble a data-space FactorGm from velocity-space parameters as emitted by
// a student head: logits [L*K], u-means [L*K*C], one shared log_std.
inline FactorGm factor_gm_from_velocity_params(int L, int K, int C, std::span<const double> logits,
                                               std::span<const double> u_means, double log_std,
                                               std::span<const double> x_src, double t_src) {
    if (!(t_src > 0.0 && t_src <= 1.0)) throw std::domain_error("factor_gm: t_src outside (0,1]");
    FactorGm gm;
    gm.n_chunks = L;
    gm.n_components = K;
    gm.chunk_dim = C;
    gm.x_src.assign(x_src.begin(), x_src.end());
    gm.t_src = t_src;
    double sig = Schedule::sigma(t_src);
    gm.logits.assign(logits.begin(), logits.end());
    gm.means.resize(static_cast<std::size_t>(L) * K * C);
    for (int i = 0; i < L; ++i)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < C; ++c) {
                std::size_t idx = (static_cast<std::size_t>(i) * K + k) * C + c;
                gm.means[idx] = x_src[static_cast<std::size_t>(i) * C + c] - sig * u_means[idx];
            }
    gm.log_std = log_std + std::log(sig);
    return gm;
}

namespace detail {

inline void gm_velocity_into(const FactorGm& gm, std::span<const double> x_t, double t, double var_x,
                             std::span<double> u_out) {
    if (static_cast<int>(x_t.size()) != gm.dim()) throw std::invalid_argument("gm_velocity: dimension mismatch");
    check_posterior_times(t, gm.t_src);
    int K = gm.n_components, C = gm.chunk_dim;
    PosteriorGm post;
    Vec w(static_cast<std::size_t>(K));
    for (int i = 0; i < gm.n_chunks; ++i) {
        const double* xs = gm.x_src.data() + static_cast<std::size_t>(i) * C;
        const double* xt = x_t.data() + static_cast<std::size_t>(i) * C;
        posterior_core(K, C, gm.logits.data() + static_cast<std::size_t>(i) * K,
                       gm.means.data() + static_cast<std::size_t>(i) * K * C, var_x, xs, gm.t_src, xt, t, post);
        softmax(post.logits, w);
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int k = 0; k < K; ++k) mean += w[static_cast<std::size_t>(k)] * post.means[static_cast<std::size_t>(k) * C + c];
            u_out[static_cast<std::size_t>(i) * C + c] = (xt[c] - mean) / t;
        }
    }
}

}  // namespace detail

// Closed-form mixture velocity pi(x_t, t) = (x_t - sum_k A'_k mu'_k) / t.
inline Vec gm_velocity(const FactorGm& gm, std::span<const double> x_t, double t) {
    if (gm.discrete()) throw std::invalid_argument("gm_velocity: discrete-support mixture, use gm_velocity_discrete");
    Vec u(x_t.size());
    detail::gm_velocity_into(gm, x_t, t, gm.variance(), u);
    return u;
}

// Discrete-support (std = 0) limit: mu'_k = mu_x_k, a'_k = a_k + mu_x_k.(nu - zeta/2 mu_x_k).
inline Vec gm_velocity_discrete(const FactorGm& gm, std::span<const double> x_t, double t) {
    if (!gm.discrete()) throw std::invalid_argument("gm_velocity_discrete: mixture has nonzero std");
    Vec u(x_t.size());
    detail::gm_velocity_into(gm, x_t, t, 0.0, u);
    return u;
}

// Temperature: weights A^(1/T) renormalized (logits / T), variance scaled by T.
inline void apply_temperature(IsoGm& gm, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("apply_temperature: T must be > 0");
    for (auto& a : gm.logits) a /= temperature;
    gm.log_std += 0.5 * std::log(temperature);
}

inline void apply_temperature(PosteriorGm& post, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("apply_temperature: T must be > 0");
    for (auto& a : post.logits) a /= temperature;
    post.var *= temperature;
}

inline void apply_temperature(FactorGm& gm, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("apply_temperature: T must be > 0");
    for (auto& a : gm.logits) a /= temperature;
    gm.log_std += 0.5 * std::log(temperature);
}

// Component dropout: one Bernoulli(1-rate) mask of length K shared across all
// chunks; masked components leave the softmax via -inf logits. Resamples until
// at least one component survives.
inline FactorGm gm_dropout(const FactorGm& gm, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("gm_dropout: rate outside [0,1)");
    FactorGm out = gm;
    if (rate == 0.0) return out;
    int K = gm.n_components;
    std::vector<char> keep(static_cast<std::size_t>(K));
    bool any = false;
    while (!any) {
        for (int k = 0; k < K; ++k) {
            keep[static_cast<std::size_t>(k)] = rng.uniform() >= rate;
            any |= (keep[static_cast<std::size_t>(k)] != 0);
        }
    }
    for (int i = 0; i < gm.n_chunks; ++i)
        for (int k = 0; k < K; ++k)
            if (!keep[static_cast<std::size_t>(k)]) out.logits[static_cast<std::size_t>(i) * K + k] = kNegInf;
    return out;
}

}  // namespace flowpolicy
