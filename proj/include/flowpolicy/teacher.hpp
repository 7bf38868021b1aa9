#pragma once

#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/samples.hpp"
#include "flowpolicy/schedule.hpp"

namespace flowpolicy {

// Gaussian-mixture data prior with per-component isotropic std.
struct GmPrior {
    int n_components = 0;  // J
    int dim = 0;           // D
    Vec weights;           // J, sums to 1
    Vec means;             // J*D
    Vec stds;              // J

    std::span<const double> mean(int j) const {
        return {means.data() + static_cast<std::size_t>(j) * dim, static_cast<std::size_t>(dim)};
    }
};

// Analytic teacher: one GM prior per condition class, a pooled unconditional
// prior, and interval classifier-free guidance.
struct TeacherSpec {
    int dim = 0;
    std::vector<int> class_ids;
    std::vector<GmPrior> class_priors;
    GmPrior uncond;
    double cfg_scale = 1.0;
    double cfg_lo = 0.0;
    double cfg_hi = 1.0;

    const GmPrior& prior_for(int c) const {
        for (std::size_t i = 0; i < class_ids.size(); ++i)
            if (class_ids[i] == c) return class_priors[i];
        throw std::invalid_argument("teacher: unknown condition " + std::to_string(c));
    }

    // Pools all class priors with equal class probability and validates fields.
    void finalize() {
        if (class_ids.empty() || class_ids.size() != class_priors.size())
            throw std::invalid_argument("teacher: needs at least one class prior");
        if (!(cfg_scale >= 1.0)) throw std::invalid_argument("teacher: cfg_scale must be >= 1");
        if (!(cfg_lo >= 0.0 && cfg_lo <= cfg_hi && cfg_hi <= 1.0))
            throw std::invalid_argument("teacher: cfg interval must satisfy 0 <= lo <= hi <= 1");
        uncond = GmPrior{};
        uncond.dim = dim;
        double class_w = 1.0 / static_cast<double>(class_priors.size());
        for (const auto& p : class_priors) {
            if (p.dim != dim) throw std::invalid_argument("teacher: class prior dimension mismatch");
            double wsum = 0.0;
            for (double w : p.weights) wsum += w;
            if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("teacher: class weights must sum to 1");
            for (double r : p.stds)
                if (!(r > 0.0)) throw std::invalid_argument("teacher: component stds must be > 0");
            for (int j = 0; j < p.n_components; ++j) {
                uncond.weights.push_back(class_w * p.weights[static_cast<std::size_t>(j)]);
                uncond.stds.push_back(p.stds[static_cast<std::size_t>(j)]);
                auto m = p.mean(j);
                uncond.means.insert(uncond.means.end(), m.begin(), m.end());
                ++uncond.n_components;
            }
        }
    }
};

// Exact probability-flow velocity for a GM prior via the conjugate update:
//   lambda_j = 1/rho_j^2 + alpha^2/sigma^2
//   m_j      = (theta_j/rho_j^2 + alpha x_t/sigma^2) / lambda_j
//   r_j      = log w_j + logN(x_t; alpha theta_j, (sigma^2 + alpha^2 rho_j^2) I)
//   u        = (x_t - sum_j softmax(r)_j m_j) / t
inline Vec gm_prior_velocity(const GmPrior& prior, std::span<const double> x_t, double t) {
    if (static_cast<int>(x_t.size()) != prior.dim) throw std::invalid_argument("teacher: dimension mismatch");
    if (!(t >= kTimeFloor && t <= 1.0)) throw std::domain_error("teacher: t outside [t_floor, 1]");
    double a = Schedule::alpha(t), s = Schedule::sigma(t);
    double a2s2 = a * a / (s * s);
    int J = prior.n_components, D = prior.dim;
    Vec resp(static_cast<std::size_t>(J));
    Vec post_means(static_cast<std::size_t>(J) * D);
    for (int j = 0; j < J; ++j) {
        double rho2 = prior.stds[static_cast<std::size_t>(j)] * prior.stds[static_cast<std::size_t>(j)];
        double marg_var = s * s + a * a * rho2;
        auto theta = prior.mean(j);
        double sq = 0.0;
        for (int d = 0; d < D; ++d) {
            double diff = x_t[static_cast<std::size_t>(d)] - a * theta[static_cast<std::size_t>(d)];
            sq += diff * diff;
        }
        resp[static_cast<std::size_t>(j)] = std::log(prior.weights[static_cast<std::size_t>(j)]) -
                                            0.5 * D * std::log(6.283185307179586 * marg_var) - 0.5 * sq / marg_var;
        double lambda = 1.0 / rho2 + a2s2;
        for (int d = 0; d < D; ++d)
            post_means[static_cast<std::size_t>(j) * D + d] =
                (theta[static_cast<std::size_t>(d)] / rho2 + a * x_t[static_cast<std::size_t>(d)] / (s * s)) / lambda;
    }
    Vec r = softmax(resp);
    Vec u(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) {
        double e = 0.0;
        for (int j = 0; j < J; ++j) e += r[static_cast<std::size_t>(j)] * post_means[static_cast<std::size_t>(j) * D + d];
        u[static_cast<std::size_t>(d)] = (x_t[static_cast<std::size_t>(d)] - e) / t;
    }
    return u;
}

inline Vec teacher_velocity(const TeacherSpec& spec, std::span<const double> x_t, double t, int c) {
    return gm_prior_velocity(spec.prior_for(c), x_t, t);
}

// Interval CFG: u = u_uncond + w (u_cond - u_uncond) when t is inside the
// interval, the conditional velocity otherwise.
inline Vec teacher_velocity_cfg(const TeacherSpec& spec, std::span<const double> x_t, double t, int c) {
    Vec u_cond = teacher_velocity(spec, x_t, t, c);
    if (spec.cfg_scale == 1.0 || t < spec.cfg_lo || t > spec.cfg_hi) return u_cond;
    Vec u_unc = gm_prior_velocity(spec.uncond, x_t, t);
    Vec u(u_cond.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = u_unc[i] + spec.cfg_scale * (u_cond[i] - u_unc[i]);
    return u;
}

// Euler-integrates the guided teacher velocity from tau=1 to tau=0 with
// uniform raw substeps mapped through shift m; velocity queries are clamped
// to the time floor.
inline Vec teacher_sample_from(const TeacherSpec& spec, int c, int substeps, double shift_m, Vec x) {
    if (substeps < 1) throw std::invalid_argument("teacher_sample: substeps must be >= 1");
    double h_tau = 1.0 / static_cast<double>(substeps);
    for (int k = 0; k < substeps; ++k) {
        double tau_hi = 1.0 - k * h_tau;
        double tau_lo = (k + 1 == substeps) ? 0.0 : 1.0 - (k + 1) * h_tau;
        double t_hi = shift_time(tau_hi, shift_m);
        double t_lo = shift_time(tau_lo, shift_m);
        Vec u = teacher_velocity_cfg(spec, x, std::max(t_hi, kTimeFloor), c);
        double h = t_hi - t_lo;
        for (std::size_t d = 0; d < x.size(); ++d) x[d] -= h * u[d];
        if (!all_finite(x)) throw NumericalError("teacher_sample: non-finite state", k);
    }
    return x;
}

inline Vec teacher_sample(const TeacherSpec& spec, int c, int substeps, double shift_m, std::uint64_t seed) {
    return teacher_sample_from(spec, c, substeps, shift_m, draw_noise(spec.dim, seed, 0));
}

// Seed-paired batch: sample i uses the shared (seed, i) noise and condition
// streams, so it can be aligned pairwise with a student sampler batch.
inline SampleSet teacher_sample_batch(const TeacherSpec& spec, long n, int substeps, double shift_m,
                                      std::uint64_t seed) {
    SampleSet out;
    out.dim = spec.dim;
    out.has_labels = true;
    for (long i = 0; i < n; ++i) {
        int c = draw_condition(spec.class_ids, seed, i);
        out.append(teacher_sample_from(spec, c, substeps, shift_m, draw_noise(spec.dim, seed, i)), c);
    }
    return out;
}

// Toy datasets. gm-grid draws from the teacher prior itself; rings and
// checkerboard are fixed analytic 2D densities.
struct ToyDataset {
    std::string name;
    SampleSet set;
};

inline ToyDataset gen_toy_dataset(const std::string& name, long n, std::uint64_t seed,
                                  const TeacherSpec* spec = nullptr) {
    if (n < 1) throw std::invalid_argument("gen_toy_dataset: n must be >= 1");
    ToyDataset ds;
    ds.name = name;
    Rng rng = substream(seed, RngUse::Dataset);
    if (name == "gm-grid") {
        if (!spec) throw std::invalid_argument("gen_toy_dataset: gm-grid needs a teacher spec");
        ds.set.dim = spec->dim;
        ds.set.has_labels = true;
        for (long i = 0; i < n; ++i) {
            int ci = static_cast<int>(rng.uniform_index(spec->class_ids.size()));
            const GmPrior& p = spec->class_priors[static_cast<std::size_t>(ci)];
            double r = rng.uniform();
            int j = 0;
            double acc = p.weights[0];
            while (j + 1 < p.n_components && r > acc) acc += p.weights[static_cast<std::size_t>(++j)];
            Vec x(static_cast<std::size_t>(p.dim));
            auto theta = p.mean(j);
            for (int d = 0; d < p.dim; ++d)
                x[static_cast<std::size_t>(d)] = theta[static_cast<std::size_t>(d)] + p.stds[static_cast<std::size_t>(j)] * rng.normal();
            ds.set.append(x, spec->class_ids[static_cast<std::size_t>(ci)]);
        }
    } else if (name == "rings") {
        ds.set.dim = 2;
        ds.set.has_labels = true;
        for (long i = 0; i < n; ++i) {
            int ring = static_cast<int>(rng.uniform_index(2));
            double radius = (ring == 0 ? 1.0 : 2.0) + 0.05 * rng.normal();
            double angle = rng.uniform(0.0, 6.283185307179586);
            Vec x = {radius * std::cos(angle), radius * std::sin(angle)};
            ds.set.append(x, ring);
        }
    } else if (name == "checkerboard") {
        // Support: unit cells of [-2,2]^2 with even (i+j).
        ds.set.dim = 2;
        for (long i = 0; i < n; ++i) {
            int cell = static_cast<int>(rng.uniform_index(8));
            int row = cell / 2;
            int col = 2 * (cell % 2) + (row % 2);
            Vec x = {-2.0 + col + rng.uniform(), -2.0 + row + rng.uniform()};
            ds.set.append(x);
        }
    } else if (name == "csv") {
        throw std::invalid_argument("gen_toy_dataset: csv datasets are loaded from a file, not generated");
    } else {
        throw std::invalid_argument("gen_toy_dataset: unknown dataset '" + name + "'");
    }
    return ds;
}

inline ToyDataset load_dataset_csv(const std::string& path) {
    ToyDataset ds;
    ds.name = "csv";
    ds.set = read_samples_csv(path);
    return ds;
}

}  // namespace flowpolicy
