#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/samples.hpp"

namespace flowpolicy {

// Mean squared endpoint distance across seed-paired samples.
inline double metric_endpoint_alignment(const SampleSet& a, const SampleSet& b) {
    if (a.count != b.count || a.dim != b.dim)
        throw std::invalid_argument("endpoint alignment: inputs must be seed-paired with equal counts");
    if (a.count == 0) throw std::invalid_argument("endpoint alignment: empty inputs");
    double s = 0.0;
    for (long i = 0; i < a.count; ++i) s += squared_distance(a.row(i), b.row(i));
    return s / static_cast<double>(a.count);
}

namespace detail {

// Exact 1D Wasserstein-1 between two empirical distributions (possibly of
// different sizes): integral of |F_a - F_b| over the merged support.
inline double wasserstein1_1d(Vec a, Vec b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double inv_a = 1.0 / static_cast<double>(a.size());
    double inv_b = 1.0 / static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double cdf_a = 0.0, cdf_b = 0.0, prev = 0.0, w = 0.0;
    bool first = true;
    while (i < a.size() || j < b.size()) {
        double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
        if (!first) w += std::abs(cdf_a - cdf_b) * (x - prev);
        while (i < a.size() && a[i] == x) {
            cdf_a += inv_a;
            ++i;
        }
        while (j < b.size() && b[j] == x) {
            cdf_b += inv_b;
            ++j;
        }
        prev = x;
        first = false;
    }
    return w;
}

}  // namespace detail

// Average over random unit projections of the 1D Wasserstein-1 distance
// between the projected samples. Symmetric in (a, b) given the same seed.
inline double metric_sliced_wasserstein(const SampleSet& a, const SampleSet& b, int n_projections,
                                        std::uint64_t seed) {
    if (a.dim != b.dim) throw std::invalid_argument("sliced wasserstein: dimension mismatch");
    if (a.count == 0 || b.count == 0) throw std::invalid_argument("sliced wasserstein: empty inputs");
    if (n_projections < 1) throw std::invalid_argument("sliced wasserstein: need at least one projection");
    double total = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Rng rng = substream(seed, RngUse::Projection, p);
        Vec v;
        double norm = 0.0;
        while (norm < 1e-12) {
            v = rng.normal_vec(static_cast<std::size_t>(a.dim));
            norm = std::sqrt(squared_norm(v));
        }
        for (auto& x : v) x /= norm;
        Vec pa(static_cast<std::size_t>(a.count)), pb(static_cast<std::size_t>(b.count));
        for (long i = 0; i < a.count; ++i) pa[static_cast<std::size_t>(i)] = dot(a.row(i), v);
        for (long i = 0; i < b.count; ++i) pb[static_cast<std::size_t>(i)] = dot(b.row(i), v);
        total += detail::wasserstein1_1d(std::move(pa), std::move(pb));
    }
    return total / static_cast<double>(n_projections);
}

// Mean pairwise Euclidean distance.
inline double metric_diversity(const SampleSet& a) {
    if (a.count < 2) throw std::invalid_argument("diversity: need at least two samples");
    double s = 0.0;
    for (long i = 0; i < a.count; ++i)
        for (long j = i + 1; j < a.count; ++j) s += std::sqrt(squared_distance(a.row(i), a.row(j)));
    return s / (0.5 * static_cast<double>(a.count) * static_cast<double>(a.count - 1));
}

}  // namespace flowpolicy
