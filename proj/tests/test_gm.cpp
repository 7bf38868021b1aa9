#include <catch2/catch_amalgamated.hpp>

#include "flowpolicy/gm.hpp"
#include "oracles.hpp"

using namespace flowpolicy;
using Catch::Matchers::WithinAbs;

namespace {

IsoGm make_iso(int K, int C, Vec logits, Vec means, double log_std, GmSpace space) {
    IsoGm gm;
    gm.n_components = K;
    gm.chunk_dim = C;
    gm.logits = std::move(logits);
    gm.means = std::move(means);
    gm.log_std = log_std;
    gm.space = space;
    return gm;
}

}  // namespace

TEST_CASE("u_to_x0 fixed points") {
    Vec x_src = {0.7, -0.3};
    SECTION("zero-velocity modes collapse onto x_src") {
        auto gm = make_iso(3, 2, {0.1, 0.2, 0.3}, Vec(6, 0.0), -0.5, GmSpace::Velocity);
        auto out = u_to_x0(gm, x_src, 0.8);
        for (int k = 0; k < 3; ++k) {
            CHECK(out.mean(k)[0] == x_src[0]);
            CHECK(out.mean(k)[1] == x_src[1]);
        }
        CHECK(out.space == GmSpace::Data);
        CHECK(out.logits == gm.logits);
    }
    SECTION("sigma(1) = 1 keeps the std and reflects means") {
        auto gm = make_iso(1, 2, {0.0}, {0.5, -1.0}, 0.0, GmSpace::Velocity);
        auto out = u_to_x0(gm, x_src, 1.0);
        CHECK_THAT(out.std_dev(), WithinAbs(1.0, 1e-15));
        CHECK_THAT(out.mean(0)[0], WithinAbs(x_src[0] - 0.5, 1e-15));
        CHECK_THAT(out.mean(0)[1], WithinAbs(x_src[1] + 1.0, 1e-15));
    }
    SECTION("wrong space tag rejected") {
        auto gm = make_iso(1, 2, {0.0}, {0.5, -1.0}, 0.0, GmSpace::Data);
        CHECK_THROWS_AS(u_to_x0(gm, x_src, 1.0), std::invalid_argument);
    }
}

TEST_CASE("u_to_x0 Monte Carlo push-forward") {
    // mean of x_src - sigma_src * u over u ~ N(mu, s^2) matches the converted mean
    Rng rng(11);
    double t_src = 0.6, s = 0.8;
    Vec x_src = {1.2};
    auto gm = make_iso(1, 1, {0.0}, {0.4}, std::log(s), GmSpace::Velocity);
    auto out = u_to_x0(gm, x_src, t_src);
    const long n = 100000;
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
        double u = 0.4 + s * rng.normal();
        acc += x_src[0] - Schedule::sigma(t_src) * u;
    }
    double mc_mean = acc / n;
    double mc_tol = 3.0 * Schedule::sigma(t_src) * s / std::sqrt(static_cast<double>(n));
    CHECK_THAT(out.mean(0)[0], WithinAbs(mc_mean, mc_tol));
}

TEST_CASE("posterior equals prior at the origin state") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        int K = 1 + static_cast<int>(rng.uniform_index(4));
        int C = 1 + static_cast<int>(rng.uniform_index(3));
        auto gm = oracles::random_iso_gm(rng, K, C, GmSpace::Data);
        Vec x_src = rng.normal_vec(static_cast<std::size_t>(C));
        double t_src = rng.uniform(0.3, 1.0);
        auto post = gm_posterior(gm, x_src, t_src, x_src, t_src);
        CHECK_THAT(post.zeta, WithinAbs(0.0, 1e-12));
        for (int c = 0; c < C; ++c) CHECK_THAT(post.nu[static_cast<std::size_t>(c)], WithinAbs(0.0, 1e-12));
        CHECK_THAT(post.var, WithinAbs(gm.variance(), 1e-12));
        Vec w_prior = gm.weights(), w_post = post.weights();
        for (int k = 0; k < K; ++k) {
            CHECK_THAT(w_post[static_cast<std::size_t>(k)], WithinAbs(w_prior[static_cast<std::size_t>(k)], 1e-12));
            for (int c = 0; c < C; ++c)
                CHECK_THAT(post.means[static_cast<std::size_t>(k) * C + c],
                           WithinAbs(gm.means[static_cast<std::size_t>(k) * C + c], 1e-12));
        }
    }
}

TEST_CASE("posterior matches the conjugate Gaussian oracle (K=1, C=1)") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        double theta = rng.uniform(-2.0, 2.0);
        double log_s = rng.uniform(-1.5, 0.3);
        auto gm = make_iso(1, 1, {0.0}, {theta}, log_s, GmSpace::Data);
        Vec x_src = {rng.normal()};  // carries no information at t_src = 1
        double t = rng.uniform(0.05, 0.999);
        double x_t = 2.0 * rng.normal();
        auto post = gm_posterior(gm, x_src, 1.0, Vec{x_t}, t);
        auto oracle = oracles::conjugate_gaussian_posterior(theta, gm.variance(), x_t, t);
        CHECK_THAT(post.means[0], WithinAbs(oracle.mean, 1e-9 * (1.0 + std::abs(oracle.mean))));
        CHECK_THAT(post.var, WithinAbs(oracle.var, 1e-12 + 1e-9 * oracle.var));
    }
}

TEST_CASE("posterior mean matches quadrature Bayes oracle (C=1, K<=4)") {
    Rng rng(17);
    int checked = 0;
    while (checked < 200) {
        int K = 1 + static_cast<int>(rng.uniform_index(4));
        Vec logits = rng.normal_vec(static_cast<std::size_t>(K));
        Vec means(static_cast<std::size_t>(K));
        for (auto& m : means) m = rng.uniform(-2.0, 2.0);
        double log_s = rng.uniform(std::log(0.1), 0.0);
        double t_src = rng.uniform(0.3, 1.0);
        double t = rng.uniform(0.05, t_src);
        Vec x_src = {rng.normal()};
        auto gm = make_iso(K, 1, logits, means, log_s, GmSpace::Data);
        // draw x_t near the diffused prior so the posterior is well-conditioned
        Vec w = gm.weights();
        double r = rng.uniform();
        int pick = 0;
        double acc = w[0];
        while (pick + 1 < K && r > acc) acc += w[static_cast<std::size_t>(++pick)];
        double x0 = means[static_cast<std::size_t>(pick)] + gm.std_dev() * rng.normal();
        double x_t = (1.0 - t) * x0 + t * rng.normal();

        auto post = gm_posterior(gm, x_src, t_src, Vec{x_t}, t);
        double closed = post.mean()[0];

        // The quadrature oracle conditions the plain prior on one observation.
        // For t_src < 1 the anchored posterior carries evidence (nu, zeta);
        // fold it into a synthetic observation y at time ty with the same
        // alpha^2/sigma^2 = zeta and alpha y / sigma^2 = nu.
        double x_obs = x_t, t_obs = t;
        if (t_src != 1.0) {
            double a_t = 1.0 - t, s_t = t, a_s = 1.0 - t_src, s_s = t_src;
            double zeta = a_t * a_t / (s_t * s_t) - a_s * a_s / (s_s * s_s);
            if (zeta < 1e-8) continue;  // nearly no evidence; inversion ill-posed
            double nu = a_t * x_t / (s_t * s_t) - a_s * x_src[0] / (s_s * s_s);
            double ratio = std::sqrt(zeta);      // alpha/sigma of the synthetic observation
            t_obs = 1.0 / (1.0 + ratio);
            x_obs = nu * t_obs * t_obs / (1.0 - t_obs);
        }
        double oracle = oracles::quadrature_posterior_mean_1d(
            w, means, Vec(static_cast<std::size_t>(K), gm.std_dev()), x_obs, t_obs);
        if (std::abs(oracle) < 0.05) continue;  // keep the relative check meaningful
        ++checked;
        CHECK_THAT(closed, WithinAbs(oracle, 1e-6 * std::abs(oracle)));
    }
}

TEST_CASE("posterior weights sum to 1 and survive extreme logits") {
    Rng rng(23);
    for (int rep = 0; rep < 100; ++rep) {
        int K = 1 + static_cast<int>(rng.uniform_index(6));
        int C = 1 + static_cast<int>(rng.uniform_index(3));
        auto gm = oracles::random_iso_gm(rng, K, C, GmSpace::Data);
        for (auto& a : gm.logits) a = rng.uniform(-500.0, 500.0);
        Vec x_src = rng.normal_vec(static_cast<std::size_t>(C));
        double t_src = rng.uniform(0.3, 1.0);
        double t = rng.uniform(0.05, t_src);
        Vec x_t = rng.normal_vec(static_cast<std::size_t>(C));
        auto post = gm_posterior(gm, x_src, t_src, x_t, t);
        Vec w = post.weights();
        double sum = 0.0;
        for (double x : w) {
            REQUIRE(std::isfinite(x));
            sum += x;
        }
        CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("gm_posterior domain errors") {
    auto gm = make_iso(1, 1, {0.0}, {0.0}, 0.0, GmSpace::Data);
    Vec x = {0.0};
    CHECK_THROWS_AS(gm_posterior(gm, x, 0.5, x, 0.7), std::domain_error);
    CHECK_THROWS_AS(gm_posterior(gm, x, 0.5, x, 1e-6), std::domain_error);
    auto gm_u = make_iso(1, 1, {0.0}, {0.0}, 0.0, GmSpace::Velocity);
    CHECK_THROWS_AS(gm_posterior(gm_u, x, 0.5, x, 0.3), std::invalid_argument);
}

TEST_CASE("gm_velocity hand-checked single-Gaussian case") {
    // prior N(0,1) anchored at t_src=1; at t=0.5, x_t=0.5 the posterior mean is
    // (0 + 1.0)/2 = 0.5 (precision 1+1), so the velocity vanishes.
    FactorGm gm;
    gm.n_chunks = 1;
    gm.n_components = 1;
    gm.chunk_dim = 1;
    gm.logits = {0.0};
    gm.means = {0.0};
    gm.log_std = 0.0;
    gm.x_src = {1.7};  // arbitrary; carries no information at t_src = 1
    gm.t_src = 1.0;
    Vec u = gm_velocity(gm, Vec{0.5}, 0.5);
    CHECK_THAT(u[0], WithinAbs(0.0, 1e-12));
}

TEST_CASE("gm_velocity is continuous in t") {
    Rng rng(29);
    for (int rep = 0; rep < 100; ++rep) {
        int L = 1 + static_cast<int>(rng.uniform_index(2));
        int K = 1 + static_cast<int>(rng.uniform_index(8));
        int C = 1 + static_cast<int>(rng.uniform_index(3));
        double t_src = rng.uniform(0.5, 1.0);
        auto gm = oracles::random_factor_gm(rng, L, K, C, t_src);
        Vec x = rng.normal_vec(static_cast<std::size_t>(L * C));
        for (auto& v : x) v *= 2.0;
        double t = rng.uniform(0.1, t_src - 1e-3);
        Vec u1 = gm_velocity(gm, x, t);
        Vec u2 = gm_velocity(gm, x, t - 1e-6);
        for (std::size_t d = 0; d < u1.size(); ++d)
            CHECK(std::abs(u1[d] - u2[d]) <= 1e-3 * (1.0 + std::abs(u1[d])));
    }
}

TEST_CASE("discrete-support velocity") {
    SECTION("small-s limit agrees with the discrete form") {
        Rng rng(31);
        for (int rep = 0; rep < 100; ++rep) {
            int K = 1 + static_cast<int>(rng.uniform_index(4));
            int C = 1 + static_cast<int>(rng.uniform_index(2));
            double t_src = rng.uniform(0.5, 1.0);
            Vec logits = rng.normal_vec(static_cast<std::size_t>(K));
            Vec means = rng.normal_vec(static_cast<std::size_t>(K) * C);
            Vec x_src = rng.normal_vec(static_cast<std::size_t>(C));
            auto small = factor_gm_from_velocity_params(1, K, C, logits, means, std::log(1e-6), x_src, t_src);
            FactorGm disc = small;
            disc.log_std = kNegInf;
            double t = rng.uniform(0.2, t_src);
            Vec x = rng.normal_vec(static_cast<std::size_t>(C));
            Vec u_small = gm_velocity(small, x, t);
            Vec u_disc = gm_velocity_discrete(disc, x, t);
            for (std::size_t d = 0; d < u_small.size(); ++d)
                CHECK(std::abs(u_small[d] - u_disc[d]) <= 1e-3 * (1.0 + std::abs(u_disc[d])));
        }
    }
    SECTION("prior-mean velocity at the origin") {
        FactorGm gm;
        gm.n_chunks = 1;
        gm.n_components = 2;
        gm.chunk_dim = 1;
        gm.logits = {std::log(0.25), std::log(0.75)};
        gm.means = {1.0, -2.0};
        gm.log_std = kNegInf;
        gm.x_src = {0.4};
        gm.t_src = 0.8;
        Vec u = gm_velocity_discrete(gm, gm.x_src, gm.t_src);
        double prior_mean = 0.25 * 1.0 + 0.75 * (-2.0);
        CHECK_THAT(u[0], WithinAbs((0.4 - prior_mean) / 0.8, 1e-12));
    }
    SECTION("symmetric two-component case gives zero velocity") {
        FactorGm gm;
        gm.n_chunks = 1;
        gm.n_components = 2;
        gm.chunk_dim = 1;
        gm.logits = {0.3, 0.3};
        gm.means = {2.0, -2.0};
        gm.log_std = kNegInf;
        gm.x_src = {0.0};
        gm.t_src = 1.0;
        Vec u = gm_velocity_discrete(gm, Vec{0.0}, 0.5);
        CHECK_THAT(u[0], WithinAbs(0.0, 1e-12));
    }
    SECTION("mode dispatch checks") {
        Rng rng(1);
        auto cont = oracles::random_factor_gm(rng, 1, 2, 1, 1.0);
        CHECK_THROWS_AS(gm_velocity_discrete(cont, Vec{0.0}, 0.5), std::invalid_argument);
        FactorGm disc = cont;
        disc.log_std = kNegInf;
        CHECK_THROWS_AS(gm_velocity(disc, Vec{0.0}, 0.5), std::invalid_argument);
    }
}

TEST_CASE("apply_temperature") {
    SECTION("T=1 is the identity") {
        auto gm = make_iso(3, 1, {0.5, -0.2, 0.1}, {1.0, 2.0, 3.0}, -0.3, GmSpace::Data);
        auto copy = gm;
        apply_temperature(copy, 1.0);
        CHECK(copy.logits == gm.logits);
        CHECK(copy.log_std == gm.log_std);
    }
    SECTION("argmax preserved and variance shrinks as T -> 0") {
        auto gm = make_iso(3, 1, {0.5, 1.4, -0.2}, {1.0, 2.0, 3.0}, 0.0, GmSpace::Data);
        apply_temperature(gm, 1e-6);
        Vec w = gm.weights();
        CHECK(w[1] > 0.999999);
        CHECK(gm.variance() < 1e-5);
    }
    SECTION("argmax invariance for many temperatures") {
        Rng rng(41);
        for (int rep = 0; rep < 50; ++rep) {
            auto gm = oracles::random_iso_gm(rng, 5, 1, GmSpace::Data);
            Vec w0 = gm.weights();
            std::size_t arg0 = std::max_element(w0.begin(), w0.end()) - w0.begin();
            auto copy = gm;
            apply_temperature(copy, rng.uniform(0.05, 4.0));
            Vec w1 = copy.weights();
            std::size_t arg1 = std::max_element(w1.begin(), w1.end()) - w1.begin();
            CHECK(arg0 == arg1);
        }
    }
    SECTION("hand-checked K=2 weights at T=0.5") {
        auto gm = make_iso(2, 1, {std::log(0.8), std::log(0.2)}, {0.0, 0.0}, 0.0, GmSpace::Data);
        apply_temperature(gm, 0.5);
        Vec w = gm.weights();
        CHECK_THAT(w[0], WithinAbs(16.0 / 17.0, 1e-12));
        CHECK_THAT(w[1], WithinAbs(1.0 / 17.0, 1e-12));
        CHECK_THAT(gm.variance(), WithinAbs(0.5, 1e-12));
    }
    SECTION("rejects T <= 0") {
        auto gm = make_iso(1, 1, {0.0}, {0.0}, 0.0, GmSpace::Data);
        CHECK_THROWS_AS(apply_temperature(gm, 0.0), std::invalid_argument);
    }
}

TEST_CASE("gm_dropout") {
    Rng seed_rng(37);
    auto make_policy = [&](int L, int K, int C) { return oracles::random_factor_gm(seed_rng, L, K, C, 1.0); };

    SECTION("rate 0 leaves the policy unchanged") {
        auto gm = make_policy(2, 4, 2);
        Rng rng(1);
        auto out = gm_dropout(gm, 0.0, rng);
        CHECK(out.logits == gm.logits);
    }
    SECTION("at least one component always survives") {
        auto gm = make_policy(3, 4, 2);
        Rng rng(2);
        for (int rep = 0; rep < 200; ++rep) {
            auto out = gm_dropout(gm, 0.97, rng);
            Vec w = softmax(std::span<const double>(out.logits.data(), 4));
            double sum = 0.0;
            int survivors = 0;
            for (double x : w) {
                sum += x;
                if (x > 1e-12) ++survivors;
            }
            CHECK(survivors >= 1);
            CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
        }
    }
    SECTION("single survivor gets weight 1 in every chunk") {
        auto gm = make_policy(3, 4, 2);
        Rng rng(8);
        FactorGm out = gm;
        for (int k = 1; k < 4; ++k)
            for (int i = 0; i < 3; ++i) out.logits[static_cast<std::size_t>(i) * 4 + k] = kNegInf;
        for (int i = 0; i < 3; ++i) {
            Vec w = softmax(std::span<const double>(out.logits.data() + i * 4, 4));
            CHECK_THAT(w[0], WithinAbs(1.0, 1e-15));
        }
    }
    SECTION("mask is shared across chunks") {
        auto gm = make_policy(3, 6, 1);
        Rng rng(3);
        auto out = gm_dropout(gm, 0.5, rng);
        for (int k = 0; k < 6; ++k) {
            bool masked0 = std::isinf(out.logits[static_cast<std::size_t>(k)]);
            for (int i = 1; i < 3; ++i)
                CHECK(std::isinf(out.logits[static_cast<std::size_t>(i) * 6 + k]) == masked0);
        }
    }
    SECTION("empirical survival frequency matches the rate") {
        auto gm = make_policy(1, 4, 1);
        Rng rng(4);
        const int trials = 100000;
        std::vector<long> survived(4, 0);
        for (int i = 0; i < trials; ++i) {
            auto out = gm_dropout(gm, 0.05, rng);
            for (int k = 0; k < 4; ++k)
                if (!std::isinf(out.logits[static_cast<std::size_t>(k)])) ++survived[static_cast<std::size_t>(k)];
        }
        double sigma = std::sqrt(0.95 * 0.05 / trials);
        for (int k = 0; k < 4; ++k) {
            double freq = static_cast<double>(survived[static_cast<std::size_t>(k)]) / trials;
            CHECK_THAT(freq, WithinAbs(0.95, 3.5 * sigma));
        }
    }
    SECTION("dropout-then-velocity equals the physically reduced mixture") {
        auto gm = make_policy(2, 4, 2);
        Rng rng(5);
        auto dropped = gm_dropout(gm, 0.5, rng);
        FactorGm reduced;
        reduced.n_chunks = gm.n_chunks;
        reduced.chunk_dim = gm.chunk_dim;
        reduced.log_std = gm.log_std;
        reduced.x_src = gm.x_src;
        reduced.t_src = gm.t_src;
        std::vector<int> keep;
        for (int k = 0; k < 4; ++k)
            if (!std::isinf(dropped.logits[static_cast<std::size_t>(k)])) keep.push_back(k);
        reduced.n_components = static_cast<int>(keep.size());
        for (int i = 0; i < gm.n_chunks; ++i)
            for (int k : keep) {
                reduced.logits.push_back(gm.logits[static_cast<std::size_t>(i) * 4 + k]);
                for (int c = 0; c < gm.chunk_dim; ++c)
                    reduced.means.push_back(gm.means[(static_cast<std::size_t>(i) * 4 + k) * gm.chunk_dim + c]);
            }
        Rng xr(6);
        for (int rep = 0; rep < 10; ++rep) {
            Vec x = xr.normal_vec(static_cast<std::size_t>(gm.dim()));
            double t = xr.uniform(0.2, 1.0);
            Vec a = gm_velocity(dropped, x, t);
            Vec b = gm_velocity(reduced, x, t);
            for (std::size_t d = 0; d < a.size(); ++d) CHECK_THAT(a[d], WithinAbs(b[d], 1e-12));
        }
    }
    SECTION("rejects rate outside [0,1)") {
        auto gm = make_policy(1, 2, 1);
        Rng rng(7);
        CHECK_THROWS_AS(gm_dropout(gm, 1.0, rng), std::invalid_argument);
        CHECK_THROWS_AS(gm_dropout(gm, -0.1, rng), std::invalid_argument);
    }
}
