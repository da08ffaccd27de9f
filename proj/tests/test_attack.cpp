#include <doctest.h>

#include <cmath>

#include "fedsim/attack.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "oracles.hpp"

using namespace fedsim;

TEST_CASE("benign_stats") {
    const BenignStats s = benign_stats({{1, 3}, {3, 5}});
    CHECK(s.mean[0] == doctest::Approx(2.0));
    CHECK(s.mean[1] == doctest::Approx(4.0));
    CHECK(s.std[0] == doctest::Approx(1.0));
    CHECK(s.std[1] == doctest::Approx(1.0));
    CHECK(s.count == 2);

    const BenignStats same = benign_stats({{2, 2}, {2, 2}, {2, 2}});
    CHECK(same.std[0] == doctest::Approx(0.0));

    CHECK_THROWS_AS(benign_stats({{1.0}}), DimensionError);
}

TEST_CASE("inverse normal cdf") {
    CHECK(std_normal_inv_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-10));
    // values from the erfc-based numerical oracle
    CHECK(std::abs(std_normal_inv_cdf(0.975) - 1.959963984540054) < 1e-8);
    CHECK(std::abs(std_normal_inv_cdf(0.6) - 0.2533471031357997) < 1e-8);

    // round trip against the oracle CDF across the domain
    for (double p = 0.001; p < 0.9995; p += 0.007) {
        const double z = std_normal_inv_cdf(p);
        CHECK(std::abs(oracle::normal_cdf(z) - p) < 1e-10);
    }
    CHECK_THROWS_AS(std_normal_inv_cdf(0.0), DimensionError);
    CHECK_THROWS_AS(std_normal_inv_cdf(1.0), DimensionError);
}

TEST_CASE("compute_z_max") {
    const ZMax a = compute_z_max(25, 5);
    CHECK(a.supporters == 8);
    CHECK(a.quantile == doctest::Approx(0.6));
    CHECK(std::abs(a.z - 0.2533471031357997) < 1e-8);
    CHECK_FALSE(a.degenerate);

    const ZMax b = compute_z_max(10, 2);
    CHECK(b.supporters == 4);
    CHECK(b.quantile == doctest::Approx(0.5));
    CHECK(b.z == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(b.degenerate);

    const ZMax c = compute_z_max(25, 10);
    CHECK(c.supporters == 3);
    CHECK(c.quantile == doctest::Approx(0.8));
    CHECK(std::abs(c.z - 0.8416212335729143) < 1e-8);

    CHECK_THROWS_AS(compute_z_max(10, 5), DimensionError);
    CHECK_THROWS_AS(compute_z_max(10, 0), DimensionError);
}

TEST_CASE("alie") {
    BenignStats s;
    s.mean = {1, 1};
    s.std = {2, 0};
    const ParamVector p = attack_alie(s, 0.25);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(1.0));

    CHECK(attack_alie(s, 0.0) == s.mean);

    BenignStats zero_sigma;
    zero_sigma.mean = {3, -4};
    zero_sigma.std = {0, 0};
    CHECK(attack_alie(zero_sigma, 5.0) == zero_sigma.mean);

    // plus orientation flag
    const ParamVector plus = attack_alie(s, 0.25, false);
    CHECK(plus[0] == doctest::Approx(1.5));

    // z = z_max(25, 5) keeps every coordinate inside [mean - 0.2534*std, mean]
    Rng rng(4);
    BenignStats r;
    r.mean.resize(50);
    r.std.resize(50);
    for (std::size_t i = 0; i < 50; ++i) {
        r.mean[i] = rng.normal();
        r.std[i] = std::abs(rng.normal());
    }
    const double z = compute_z_max(25, 5).z;
    const ParamVector out = attack_alie(r, z);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(out[i] <= r.mean[i] + 1e-12);
        CHECK(out[i] >= r.mean[i] - 0.2534 * r.std[i] - 1e-12);
    }
}

TEST_CASE("ipm") {
    BenignStats s;
    s.mean = {1, -2};
    s.std = {1, 1};
    const ParamVector p = attack_ipm(s, 0.4);
    CHECK(p[0] == doctest::Approx(-0.4));
    CHECK(p[1] == doctest::Approx(0.8));

    CHECK(cosine_similarity(p, s.mean) == doctest::Approx(-1.0));

    const ParamVector neg = attack_ipm(s, 1.0);
    CHECK(neg[0] == doctest::Approx(-1.0));
    CHECK(neg[1] == doctest::Approx(2.0));

    CHECK_THROWS_AS(attack_ipm(s, 0.0), DimensionError);
}

TEST_CASE("ipm flips the mean aggregate when z*k_m > k - k_m") {
    // 1-D instance: k = 5, k_m = 2, benign momenta all at m.
    const double m = 0.7;
    const int k = 5, k_m = 2;
    const double z = 2.0; // z*k_m = 4 > k - k_m = 3
    const double aggregate = ((k - k_m) * m + k_m * (-z * m)) / k;
    CHECK(aggregate * m < 0.0); // inner product with the benign mean flips sign

    const double weak_z = 1.0; // z*k_m = 2 < 3
    const double aggregate2 = ((k - k_m) * m + k_m * (-weak_z * m)) / k;
    CHECK(aggregate2 * m > 0.0);
}

TEST_CASE("bitflip") {
    CHECK(attack_bitflip({1, -2, 0}) == ParamVector{-1, 2, 0});
    CHECK(attack_bitflip(attack_bitflip({3, -4})) == ParamVector{3, -4});
    CHECK(attack_bitflip({0, 0}) == ParamVector{0, 0});
}

TEST_CASE("min_opt degenerate cases") {
    BenignStats s;
    s.mean = {1, 1};
    s.std = {0, 0};
    const std::vector<ParamVector> identical{{1, 1}, {1, 1}, {1, 1}};
    const MinOptResult r = attack_min_opt(s, identical, MinOptMode::max, 5.0, 1e-3);
    CHECK(r.z == 0.0);
    CHECK(r.degenerate);
    CHECK(r.poisoned == s.mean);
}

TEST_CASE("min_opt 1-D instance against a feasibility scan") {
    // benign {0, 2}: mean 1, population std 1, max pairwise distance 2.
    const std::vector<ParamVector> benign{{0.0}, {2.0}};
    const BenignStats s = benign_stats(benign);
    CHECK(s.mean[0] == doctest::Approx(1.0));
    CHECK(s.std[0] == doctest::Approx(1.0));

    for (MinOptMode mode : {MinOptMode::max, MinOptMode::sum}) {
        // independent scan for the largest feasible z
        double threshold = 0.0;
        for (const auto& a : benign) {
            double acc = 0.0;
            for (const auto& b : benign) {
                if (&a == &b) continue;
                const double dist = std::abs(a[0] - b[0]);
                if (mode == MinOptMode::max)
                    acc = std::max(acc, dist);
                else
                    acc += dist * dist;
            }
            threshold = std::max(threshold, acc);
        }
        double scan_best = 0.0;
        for (double z = 0.0; z <= 5.0; z += 1e-4) {
            const double cand = s.mean[0] - z * s.std[0];
            double v = 0.0;
            for (const auto& b : benign) {
                const double dist = std::abs(cand - b[0]);
                if (mode == MinOptMode::max)
                    v = std::max(v, dist);
                else
                    v += dist * dist;
            }
            if (v <= threshold) scan_best = z;
        }
        const MinOptResult r = attack_min_opt(s, benign, mode, 5.0, 1e-4);
        CHECK(std::abs(r.z - scan_best) < 1e-3);
        // both inequalities bind at z = 1 for mode max: |1-z| <= 2 and |z+1| <= 2
        if (mode == MinOptMode::max) CHECK(r.z == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(r.poisoned[0] == doctest::Approx(1.0 - r.z).epsilon(1e-6));
    }
}

TEST_CASE("min_opt caps at z_hi") {
    // Widely spread benign values leave plenty of slack; z_hi binds.
    const std::vector<ParamVector> benign{{0.0}, {10.0}, {20.0}};
    const BenignStats s = benign_stats(benign);
    const MinOptResult r = attack_min_opt(s, benign, MinOptMode::max, 0.5, 1e-4);
    CHECK(r.z == doctest::Approx(0.5));
}

TEST_CASE("hybrid sparse perturbation") {
    BenignStats s;
    s.mean = {0, 0};
    s.std = {2, 2};
    const std::vector<std::uint8_t> mask{1, 0};
    const ParamVector p = attack_hybrid_sparse(s, mask, 0.25, 1.5);
    CHECK(p[0] == doctest::Approx(-3.0));
    CHECK(p[1] == doctest::Approx(-0.5));

    // all-zeros mask reduces to alie(z1); all-ones to alie(z2)
    Rng rng(6);
    BenignStats r;
    r.mean.resize(20);
    r.std.resize(20);
    for (std::size_t i = 0; i < 20; ++i) {
        r.mean[i] = rng.normal();
        r.std[i] = std::abs(rng.normal());
    }
    const std::vector<std::uint8_t> zeros(20, 0), ones(20, 1);
    CHECK(attack_hybrid_sparse(r, zeros, 0.3, 1.5) == attack_alie(r, 0.3));
    CHECK(attack_hybrid_sparse(r, ones, 0.3, 1.5) == attack_alie(r, 1.5));

    // differs from the mean only where sigma > 0
    BenignStats mixed;
    mixed.mean = {1, 2, 3};
    mixed.std = {0, 1, 0};
    const std::vector<std::uint8_t> m3{1, 1, 1};
    const ParamVector q = attack_hybrid_sparse(mixed, m3, 0.5, 1.5);
    CHECK(q[0] == mixed.mean[0]);
    CHECK(q[1] != mixed.mean[1]);
    CHECK(q[2] == mixed.mean[2]);

    CHECK_THROWS_AS(attack_hybrid_sparse(mixed, mask, 0.5, 1.5), DimensionError);
}

TEST_CASE("hybrid z1 adaptive") {
    Rng rng(7);
    std::vector<ParamVector> benign;
    for (int i = 0; i < 6; ++i) {
        ParamVector v(8);
        for (auto& x : v) x = rng.normal();
        benign.push_back(v);
    }
    const BenignStats s = benign_stats(benign);

    SUBCASE("z2 = 0 with any mask reduces to min-sum on the dense direction") {
        const std::vector<std::uint8_t> mask(8, 0);
        const double z1 = hybrid_z1_adaptive(s, benign, mask, 0.0, 10.0, 1e-4);
        const MinOptResult r = attack_min_opt(s, benign, MinOptMode::sum, 10.0, 1e-4);
        CHECK(std::abs(z1 - r.z) < 1e-3);
    }
    SUBCASE("identical benign updates give 0") {
        const std::vector<ParamVector> same{{1, 1}, {1, 1}};
        const BenignStats st = benign_stats(same);
        const std::vector<std::uint8_t> mask{1, 0};
        CHECK(hybrid_z1_adaptive(st, same, mask, 1.5, 10.0, 1e-4) == 0.0);
    }
    SUBCASE("returned z1 is feasible and z1 + tol is not (interior case)") {
        std::vector<std::uint8_t> mask(8, 0);
        mask[0] = mask[3] = 1;
        const double tol = 1e-4;
        const double z1 = hybrid_z1_adaptive(s, benign, mask, 1.0, 50.0, tol);
        REQUIRE(z1 > 0.0);
        REQUIRE(z1 < 50.0 - tol);

        auto sum_envelope = [&](const ParamVector& cand) {
            double acc = 0.0;
            for (const auto& b : benign)
                for (std::size_t i = 0; i < b.size(); ++i)
                    acc += (cand[i] - b[i]) * (cand[i] - b[i]);
            return acc;
        };
        double threshold = 0.0;
        for (const auto& a : benign) {
            double acc = 0.0;
            for (const auto& b : benign) {
                if (&a == &b) continue;
                for (std::size_t i = 0; i < a.size(); ++i)
                    acc += (a[i] - b[i]) * (a[i] - b[i]);
            }
            threshold = std::max(threshold, acc);
        }
        const ParamVector at = attack_hybrid_sparse(s, mask, z1, 1.0);
        const ParamVector beyond = attack_hybrid_sparse(s, mask, z1 + 2 * tol, 1.0);
        CHECK(sum_envelope(at) <= threshold + 1e-9);
        CHECK(sum_envelope(beyond) > threshold);
    }
}
