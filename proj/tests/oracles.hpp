// Test-only independent oracles: quadrature Bayes, conjugate Gaussian
// updates, analytic single-Gaussian flow. These stay independent of the
// library's closed-form implementation paths they are used to check.
#pragma once

#include <cmath>
#include <vector>

#include "flowpolicy/gm.hpp"
#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/teacher.hpp"

namespace oracles {

using flowpolicy::Vec;

// E[x0 | x_t] for a 1D mixture prior sum_k w_k N(mu_k, std_k^2) and the
// likelihood N(x_t; alpha_t x0, sigma_t^2), by trapezoid quadrature on a grid
// spanning +-12 std around the prior means.
inline double quadrature_posterior_mean_1d(const Vec& weights, const Vec& means, const Vec& stds, double x_t,
                                           double t, long n_points = 20001) {
    double alpha = 1.0 - t, sigma = t;
    double lo = means[0], hi = means[0], smax = 0.0;
    for (std::size_t k = 0; k < means.size(); ++k) {
        lo = std::min(lo, means[k]);
        hi = std::max(hi, means[k]);
        smax = std::max(smax, stds[k]);
    }
    // A narrow off-center likelihood can pull the posterior into the prior
    // tail; make sure the grid covers each component's elementary Gaussian
    // product center too.
    for (std::size_t k = 0; k < means.size(); ++k) {
        double prec = 1.0 / (stds[k] * stds[k]) + alpha * alpha / (sigma * sigma);
        double center = (means[k] / (stds[k] * stds[k]) + alpha * x_t / (sigma * sigma)) / prec;
        lo = std::min(lo, center);
        hi = std::max(hi, center);
    }
    lo -= 12.0 * smax;
    hi += 12.0 * smax;
    double h = (hi - lo) / static_cast<double>(n_points - 1);
    std::vector<double> logf(static_cast<std::size_t>(n_points));
    double max_log = -1e300;
    for (long i = 0; i < n_points; ++i) {
        double x0 = lo + i * h;
        // log prior via log-sum-exp over components
        double m = -1e300;
        std::vector<double> terms(means.size());
        for (std::size_t k = 0; k < means.size(); ++k) {
            double z = (x0 - means[k]) / stds[k];
            terms[k] = std::log(weights[k]) - 0.5 * z * z - std::log(stds[k]);
            m = std::max(m, terms[k]);
        }
        double s = 0.0;
        for (double term : terms) s += std::exp(term - m);
        double log_prior = m + std::log(s);
        double zl = (x_t - alpha * x0) / sigma;
        logf[static_cast<std::size_t>(i)] = log_prior - 0.5 * zl * zl;
        max_log = std::max(max_log, logf[static_cast<std::size_t>(i)]);
    }
    double num = 0.0, den = 0.0;
    for (long i = 0; i < n_points; ++i) {
        double w = (i == 0 || i == n_points - 1) ? 0.5 : 1.0;
        double f = w * std::exp(logf[static_cast<std::size_t>(i)] - max_log);
        num += f * (lo + i * h);
        den += f;
    }
    return num / den;
}

// Textbook conjugate update for a single Gaussian prior N(theta, prior_var)
// under the likelihood N(x_t; alpha x0, sigma^2).
struct ConjugateResult {
    double mean, var;
};

inline ConjugateResult conjugate_gaussian_posterior(double theta, double prior_var, double x_t, double t) {
    double alpha = 1.0 - t, sigma = t;
    double precision = 1.0 / prior_var + alpha * alpha / (sigma * sigma);
    double mean = (theta / prior_var + alpha * x_t / (sigma * sigma)) / precision;
    return {mean, 1.0 / precision};
}

// Exact flow trajectory for a single-Gaussian prior N(theta, rho^2 I):
// x(t) = alpha_t theta + sqrt(sigma_t^2 + alpha_t^2 rho^2) * x1.
inline Vec gaussian_flow_state(const Vec& theta, double rho, const Vec& x1, double t) {
    double alpha = 1.0 - t, sigma = t;
    double c = std::sqrt(sigma * sigma + alpha * alpha * rho * rho);
    Vec x(theta.size());
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = alpha * theta[d] + c * x1[d];
    return x;
}

// Random mixtures for property tests.
inline flowpolicy::IsoGm random_iso_gm(flowpolicy::Rng& rng, int K, int C, flowpolicy::GmSpace space) {
    flowpolicy::IsoGm gm;
    gm.n_components = K;
    gm.chunk_dim = C;
    gm.space = space;
    gm.logits = rng.normal_vec(static_cast<std::size_t>(K));
    gm.means = rng.normal_vec(static_cast<std::size_t>(K) * C);
    gm.log_std = rng.uniform(-2.0, 0.2);
    return gm;
}

inline flowpolicy::FactorGm random_factor_gm(flowpolicy::Rng& rng, int L, int K, int C, double t_src) {
    Vec logits = rng.normal_vec(static_cast<std::size_t>(L) * K);
    Vec means = rng.normal_vec(static_cast<std::size_t>(L) * K * C);
    Vec x_src = rng.normal_vec(static_cast<std::size_t>(L) * C);
    double log_std = rng.uniform(-2.0, 0.2);
    return flowpolicy::factor_gm_from_velocity_params(L, K, C, logits, means, log_std, x_src, t_src);
}

// Encode a shared-std teacher prior as a data-space FactorGm anchored at
// t_src = 1 (L = 1 chunk of the full dimension).
inline flowpolicy::FactorGm encode_prior_as_policy(const flowpolicy::GmPrior& prior, const Vec& x_src) {
    flowpolicy::FactorGm gm;
    gm.n_chunks = 1;
    gm.n_components = prior.n_components;
    gm.chunk_dim = prior.dim;
    gm.means = prior.means;
    gm.log_std = std::log(prior.stds[0]);
    gm.logits.resize(static_cast<std::size_t>(prior.n_components));
    for (int j = 0; j < prior.n_components; ++j)
        gm.logits[static_cast<std::size_t>(j)] = std::log(prior.weights[static_cast<std::size_t>(j)]);
    gm.x_src = x_src;
    gm.t_src = 1.0;
    return gm;
}

// Single-class teacher with n_modes Gaussians equally spaced on a circle.
inline flowpolicy::TeacherSpec make_ring_teacher(int n_modes, double radius, double rho,
                                                 double cfg_scale = 1.0) {
    flowpolicy::TeacherSpec spec;
    spec.dim = 2;
    flowpolicy::GmPrior prior;
    prior.dim = 2;
    prior.n_components = n_modes;
    for (int j = 0; j < n_modes; ++j) {
        double angle = 2.0 * 3.141592653589793 * j / n_modes;
        prior.weights.push_back(1.0 / n_modes);
        prior.means.push_back(radius * std::cos(angle));
        prior.means.push_back(radius * std::sin(angle));
        prior.stds.push_back(rho);
    }
    spec.class_ids = {0};
    spec.class_priors = {std::move(prior)};
    spec.cfg_scale = cfg_scale;
    spec.cfg_lo = 0.0;
    spec.cfg_hi = 0.7;
    spec.finalize();
    return spec;
}

}  // namespace oracles
