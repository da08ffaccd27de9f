#include <doctest.h>

#include <cmath>

#include "fedsim/aggregate.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

std::vector<ClientUpdate> updates_1d(const std::vector<double>& vals) {
    std::vector<ClientUpdate> out;
    for (std::size_t i = 0; i < vals.size(); ++i)
        out.push_back({static_cast<int>(i), ParamVector{vals[i]}});
    return out;
}

std::vector<ClientUpdate> random_updates(Rng& rng, int k, int d) {
    std::vector<ClientUpdate> out;
    for (int i = 0; i < k; ++i) {
        ParamVector m(d);
        for (auto& x : m) x = rng.uniform(-1.0, 1.0);
        out.push_back({i, std::move(m)});
    }
    return out;
}

void check_close(const ParamVector& a, const ParamVector& b, double tol = 1e-12) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

} // namespace

TEST_CASE("mean") {
    check_close(agg_mean(updates_1d({1, 3})), {2});
    check_close(agg_mean(updates_1d({7})), {7});
    CHECK_THROWS_AS(agg_mean({}), DimensionError);
}

TEST_CASE("krum scores on the 1-D example") {
    const auto scores = krum_scores(updates_1d({0, 1, 2, 3, 10}), 2);
    const std::vector<double> expect{5, 2, 2, 5, 113};
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(scores[i] == doctest::Approx(expect[i]));

    // identical updates give zero scores
    const auto zeros = krum_scores(updates_1d({4, 4, 4, 4}), 2);
    for (double s : zeros) CHECK(s == doctest::Approx(0.0));

    // translation invariance
    Rng rng(3);
    auto base = random_updates(rng, 6, 3);
    auto shifted = base;
    for (auto& u : shifted)
        for (auto& x : u.momentum) x += 17.5;
    const auto s1 = krum_scores(base, 3);
    const auto s2 = krum_scores(shifted, 3);
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == doctest::Approx(s2[i]));

    CHECK_THROWS_AS(krum_scores(updates_1d({1, 2, 3}), 3), DimensionError);
}

TEST_CASE("multikrum") {
    // Tie between scores of values 1 and 2 broken by lower client id.
    const auto out = agg_multikrum(updates_1d({0, 1, 2, 3, 10}), 1, 1, 2);
    check_close(out, {1});

    // n_select = k reduces to the mean.
    Rng rng(5);
    const auto ups = random_updates(rng, 5, 3);
    check_close(agg_multikrum(ups, 1, 5, 3), agg_mean(ups), 1e-12);

    // One far outlier is never among the k - k_m selected.
    std::vector<ClientUpdate> with_outlier = updates_1d({0.0, 0.1, 0.2, 0.05, 0.15, 100.0});
    std::vector<int> selected;
    agg_multikrum(with_outlier, 1, 5, -1, &selected);
    for (int id : selected) CHECK(id != 5);

    CHECK_THROWS_AS(agg_multikrum(updates_1d({1, 2, 3}), 1, 0), DimensionError);
}

TEST_CASE("bulyan") {
    // k_m = 0 degenerates to the mean.
    Rng rng(6);
    const auto ups = random_updates(rng, 5, 2);
    check_close(agg_bulyan(ups, 0), agg_mean(ups), 1e-12);

    // identical updates return that update
    std::vector<ClientUpdate> same;
    for (int i = 0; i < 11; ++i) same.push_back({i, ParamVector{2.5, -1.0}});
    check_close(agg_bulyan(same, 2), {2.5, -1.0});

    // 9 benign (7 clustered near 0, two extra) + 2 Byzantine at 100.
    std::vector<double> vals{-0.1, -0.05, 0.0, 0.02, 0.05, 0.08, 0.1, 0.5, 0.6, 100.0, 100.0};
    std::vector<ClientUpdate> instance;
    for (std::size_t i = 0; i < vals.size(); ++i)
        instance.push_back({static_cast<int>(i), ParamVector{vals[i]}});
    const ParamVector out = agg_bulyan(instance, 2);
    CHECK(out[0] >= -0.1);
    CHECK(out[0] <= 0.6);
    check_close(out, oracle::bulyan(instance, 2), 1e-12);

    CHECK_THROWS_AS(agg_bulyan(updates_1d({1, 2, 3, 4, 5}), 1), InfeasibleError);
}

TEST_CASE("clip_to_ball") {
    const ParamVector clipped = clip_to_ball(ParamVector{3, 4}, ParamVector{0, 0}, 1.0);
    check_close(clipped, {0.6, 0.8}, 1e-12);

    const ParamVector inside = clip_to_ball(ParamVector{0.1, 0.2}, ParamVector{0, 0}, 1.0);
    check_close(inside, {0.1, 0.2});

    const ParamVector at_ref = clip_to_ball(ParamVector{5, 5}, ParamVector{5, 5}, 0.5);
    check_close(at_ref, {5, 5});

    CHECK_THROWS_AS(clip_to_ball(ParamVector{1}, ParamVector{0}, 0.0), DimensionError);
}

TEST_CASE("centered clipping") {
    // all inside the ball: plain mean
    const auto ups = updates_1d({0.1, 0.2, 0.3});
    check_close(agg_cc(ups, ParamVector{0.0}, 1.0, 1), agg_mean(ups), 1e-12);

    // one clip pass: {0.5, 3} with tau 1 -> mean(0.5, 1)
    check_close(agg_cc(updates_1d({0.5, 3.0}), ParamVector{0.0}, 1.0, 1), {0.75});

    // With one clipping pass the output stays in the tau-ball around the
    // input reference (mean of points inside a ball). Each further pass
    // re-centers the ball, so the general bound is iters * tau.
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto rand_ups = random_updates(rng, 6, 4);
        for (auto& u : rand_ups)
            for (auto& x : u.momentum) x *= 10.0;
        ParamVector ref(4);
        for (auto& x : ref) x = rng.uniform(-1.0, 1.0);
        for (int iters : {1, 3}) {
            const ParamVector out = agg_cc(rand_ups, ref, 0.7, iters);
            double dist = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i)
                dist += (out[i] - ref[i]) * (out[i] - ref[i]);
            CHECK(std::sqrt(dist) <= iters * 0.7 + 1e-9);
        }
    }
}

TEST_CASE("coordinate median") {
    check_close(agg_cm(updates_1d({1, 2, 100})), {2});
    check_close(agg_cm(updates_1d({1, 3})), {2});
    Rng rng(9);
    const auto ups = random_updates(rng, 7, 4);
    const ParamVector med = agg_cm(ups);
    for (std::size_t j = 0; j < 4; ++j) {
        double lo = 1e9, hi = -1e9;
        for (const auto& u : ups) {
            lo = std::min(lo, u.momentum[j]);
            hi = std::max(hi, u.momentum[j]);
        }
        CHECK(med[j] >= lo);
        CHECK(med[j] <= hi);
    }
}

TEST_CASE("trimmed mean") {
    check_close(agg_tm(updates_1d({1, 2, 3, 4, 100}), 1), {3});
    const auto ups = updates_1d({5, 1, 9});
    check_close(agg_tm(ups, 0), agg_mean(ups), 1e-12);
    Rng rng(10);
    const auto rand_ups = random_updates(rng, 7, 3);
    check_close(agg_tm(rand_ups, 2), oracle::tm(rand_ups, 2), 1e-12);
    CHECK_THROWS_AS(agg_tm(updates_1d({1, 2}), 1), InfeasibleError);
}

TEST_CASE("rfa") {
    // equilateral triangle -> centroid
    std::vector<ClientUpdate> tri{{0, {0.0, 0.0}}, {1, {1.0, 0.0}}, {2, {0.5, std::sqrt(3.0) / 2}}};
    const ParamVector center = agg_rfa(tri, 1e-8, 200, 1e-10);
    check_close(center, {0.5, std::sqrt(3.0) / 6}, 1e-5);

    // 1-D geometric median is the sample median
    const ParamVector med = agg_rfa(updates_1d({0, 0, 10}), 1e-8, 200, 1e-10);
    CHECK(med[0] == doctest::Approx(0.0).epsilon(1e-4));

    // objective never exceeds the mean's objective
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ups = random_updates(rng, 5, 2);
        std::vector<ParamVector> pts;
        for (const auto& u : ups) pts.push_back(u.momentum);
        const double at_out = oracle::geomedian_objective(agg_rfa(ups, 1e-8, 100, 1e-6), pts);
        const double at_mean = oracle::geomedian_objective(agg_mean(ups), pts);
        CHECK(at_out <= at_mean + 1e-12);
    }
}

TEST_CASE("signsgd") {
    check_close(agg_signsgd({{0, {1, -2}}, {1, {3, -1}}, {2, {-1, 4}}}), {1, -1});
    check_close(agg_signsgd({{0, {0.5, -0.2, 0.0}}}), {1, -1, 0});
    check_close(agg_signsgd(updates_1d({1, -1})), {0});
    for (double v : agg_signsgd(updates_1d({3, -2, 5}))) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("gas") {
    AggregatorConfig base;
    base.byzantine_count = 1;

    SUBCASE("p = 1 equals the base aggregator") {
        Rng rng(12);
        const auto ups = random_updates(rng, 6, 5);
        base.kind = AggKind::multikrum;
        check_close(agg_gas(ups, 1, base), agg_multikrum(ups, 1, 5), 1e-12);
    }
    SUBCASE("p = d with a CM base is the coordinate median") {
        Rng rng(13);
        const auto ups = random_updates(rng, 5, 4);
        base.kind = AggKind::cm;
        check_close(agg_gas(ups, 4, base), agg_cm(ups), 1e-12);
    }
    SUBCASE("chunk lengths follow the remainder rule") {
        // d = 10, p = 3 -> chunks (4, 3, 3): verify via a mean base where each
        // chunk average is recomputed by hand.
        std::vector<ClientUpdate> ups;
        for (int i = 0; i < 3; ++i) {
            ParamVector m(10);
            for (int j = 0; j < 10; ++j) m[j] = i * 10.0 + j;
            ups.push_back({i, std::move(m)});
        }
        base.kind = AggKind::mean;
        const ParamVector out = agg_gas(ups, 3, base);
        check_close(out, agg_mean(ups), 1e-12); // mean is chunk-separable
    }
    SUBCASE("invalid p") {
        Rng rng(14);
        const auto ups = random_updates(rng, 4, 3);
        base.kind = AggKind::mean;
        CHECK_THROWS_AS(agg_gas(ups, 0, base), DimensionError);
        CHECK_THROWS_AS(agg_gas(ups, 4, base), DimensionError);
    }
}

TEST_CASE("permutation invariance and translation equivariance") {
    Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        auto ups = random_updates(rng, 7, 3);
        auto shuffled = ups;
        // simple deterministic permutation
        std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());

        check_close(agg_mean(ups), agg_mean(shuffled), 1e-12);
        check_close(agg_cm(ups), agg_cm(shuffled), 1e-12);
        check_close(agg_tm(ups, 2), agg_tm(shuffled, 2), 1e-12);
        check_close(agg_multikrum(ups, 1, 4), agg_multikrum(shuffled, 1, 4), 1e-12);
        check_close(agg_signsgd(ups), agg_signsgd(shuffled), 1e-12);
        // Weiszfeld accumulates in client order, so permutations agree only
        // to iteration tolerance.
        check_close(agg_rfa(ups, 1e-8, 100, 1e-8), agg_rfa(shuffled, 1e-8, 100, 1e-8), 1e-6);

        // translation equivariance
        ParamVector shift(3);
        for (auto& x : shift) x = rng.uniform(-5.0, 5.0);
        auto shifted = ups;
        for (auto& u : shifted)
            for (std::size_t j = 0; j < 3; ++j) u.momentum[j] += shift[j];
        auto add = [&](ParamVector v) {
            for (std::size_t j = 0; j < 3; ++j) v[j] += shift[j];
            return v;
        };
        check_close(agg_mean(shifted), add(agg_mean(ups)), 1e-12);
        check_close(agg_cm(shifted), add(agg_cm(ups)), 1e-12);
        check_close(agg_tm(shifted, 2), add(agg_tm(ups, 2)), 1e-12);
        check_close(agg_multikrum(shifted, 1, 4), add(agg_multikrum(ups, 1, 4)), 1e-12);
        check_close(agg_rfa(shifted, 1e-8, 200, 1e-9), add(agg_rfa(ups, 1e-8, 200, 1e-9)), 1e-6);
    }
}

TEST_CASE("breakdown sanity: identical benign majority pins CM and TM") {
    for (int k_m : {1, 2}) {
        std::vector<ClientUpdate> ups;
        int id = 0;
        for (int i = 0; i < k_m; ++i) ups.push_back({id++, ParamVector{500.0 + i, -99.0}});
        for (int i = 0; i < 2 * k_m + 1; ++i) ups.push_back({id++, ParamVector{1.25, 4.0}});
        check_close(agg_cm(ups), {1.25, 4.0});
        check_close(agg_tm(ups, k_m), {1.25, 4.0});
    }
}

TEST_CASE("oracle equivalence on random small instances") {
    Rng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 3 + static_cast<int>(rng.uniform_index(6)); // 3..8
        const int d = 1 + static_cast<int>(rng.uniform_index(5)); // 1..5
        const auto ups = random_updates(rng, k, d);

        check_close(agg_cm(ups), oracle::cm(ups), 1e-12);

        const int k_m_tm = static_cast<int>(rng.uniform_index((k - 1) / 2 + 1));
        check_close(agg_tm(ups, k_m_tm), oracle::tm(ups, k_m_tm), 1e-12);

        const int k_m = k >= 5 ? 1 : 0;
        const int neigh = std::max(1, k - k_m - 2);
        const auto s1 = krum_scores(ups, neigh);
        const auto s2 = oracle::krum_scores(ups, neigh);
        for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == doctest::Approx(s2[i]));

        const int n_select = 1 + static_cast<int>(rng.uniform_index(k));
        check_close(agg_multikrum(ups, k_m, n_select, neigh),
                    oracle::multikrum(ups, k_m, n_select, neigh), 1e-12);

        if (k >= 7) check_close(agg_bulyan(ups, 1), oracle::bulyan(ups, 1), 1e-12);
    }
}

TEST_CASE("aggregator facade threads the CC reference") {
    AggregatorConfig cfg;
    cfg.kind = AggKind::cc;
    cfg.cc_tau = 1.0;
    cfg.cc_iters = 1;
    Aggregator agg(cfg);
    const auto r1 = agg.aggregate(updates_1d({0.5, 3.0}));
    check_close(r1.value, {0.75});
    // second round clips against the previous aggregate (0.75)
    const auto r2 = agg.aggregate(updates_1d({0.75, 10.0}));
    check_close(r2.value, {(0.75 + 1.75) / 2});
}
