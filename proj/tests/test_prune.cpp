#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fedsim/errors.hpp"
#include "fedsim/prune.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

namespace {

LayerLayout synthetic_layout(const std::vector<std::pair<std::string, std::size_t>>& segs) {
    LayerLayout layout;
    std::size_t off = 0;
    for (const auto& [name, len] : segs) {
        LayerSegment s;
        s.name = name;
        s.kind = name.find("bias") != std::string::npos ? SegmentKind::bias
                                                        : SegmentKind::fully_connected;
        s.offset = off;
        s.length = len;
        if (s.kind == SegmentKind::fully_connected) {
            s.fan_in = static_cast<int>(len); // placeholder fans for tests
            s.fan_out = 1;
        }
        off += len;
        layout.segments.push_back(s);
    }
    layout.validate();
    return layout;
}

} // namespace

TEST_CASE("random global mask") {
    const LayerLayout layout = synthetic_layout({{"a.weight", 6}, {"a.bias", 2}, {"b.weight", 4}});
    CHECK(layout.weight_count() == 10);

    const SparseMask zero = mask_random_global(layout, 0.0, 1);
    CHECK(zero.ones() == 0);
    CHECK(zero.delta == 0.0);

    const SparseMask full = mask_random_global(layout, 1.0, 1);
    CHECK(full.ones() == 10);
    // bias coordinates never get ones
    const LayerSegment* bias = layout.find("a.bias");
    for (std::size_t i = 0; i < bias->length; ++i) CHECK(full.bits[bias->offset + i] == 0);

    const SparseMask fifth = mask_random_global(layout, 0.2, 7);
    CHECK(fifth.ones() == 2);

    const SparseMask again = mask_random_global(layout, 0.2, 7);
    CHECK(fifth.bits == again.bits);
    const SparseMask other = mask_random_global(layout, 0.2, 8);
    CHECK(fifth.bits != other.bits);
}

TEST_CASE("random layerwise mask") {
    const LayerLayout equal = synthetic_layout({{"a.weight", 8}, {"b.weight", 8}});
    const SparseMask half = mask_random_layerwise(equal, 0.5, 3);
    const auto rows = layer_occupancy_report(half);
    CHECK(rows[0].ones == 4);
    CHECK(rows[1].ones == 4);

    const SparseMask all = mask_random_layerwise(equal, 1.0, 3);
    CHECK(all.ones() == 16);

    const LayerLayout three =
        synthetic_layout({{"a.weight", 10}, {"b.weight", 7}, {"c.weight", 3}});
    const SparseMask m = mask_random_layerwise(three, 0.3, 5);
    const auto r = layer_occupancy_report(m);
    CHECK(r[0].ones == 3); // round(0.3*10)
    CHECK(r[1].ones == 2); // round(0.3*7) = round(2.1)
    CHECK(r[2].ones == 1); // round(0.3*3) = round(0.9)
}

TEST_CASE("critical layers") {
    const LayerLayout layout = synthetic_layout({{"a.weight", 6}, {"b.weight", 4}});
    const SparseMask zero = mask_random_global(layout, 0.0, 1);

    const SparseMask same = apply_critical_layers(zero, {});
    CHECK(same.bits == zero.bits);

    const SparseMask with_b = apply_critical_layers(zero, {"b.weight"});
    CHECK(with_b.ones() == 4);
    CHECK(with_b.delta == doctest::Approx(0.4));

    const SparseMask all = apply_critical_layers(zero, {"a.weight", "b.weight"});
    CHECK(all.ones() == 10);

    CHECK_THROWS_AS(apply_critical_layers(zero, {"missing"}), DimensionError);
}

TEST_CASE("erk mask") {
    SUBCASE("single segment absorbs the whole budget") {
        LayerLayout layout = synthetic_layout({{"only.weight", 100}});
        layout.segments[0].fan_in = 10;
        layout.segments[0].fan_out = 10;
        const SparseMask m = mask_erk(layout, 0.37, 2);
        CHECK(m.ones() == 37);
        CHECK(layer_occupancy_report(m)[0].fraction == doctest::Approx(0.37));
    }
    SUBCASE("smaller layer gets strictly higher density") {
        LayerLayout layout = synthetic_layout({{"small.weight", 100}, {"big.weight", 10000}});
        layout.segments[0].fan_in = 10;
        layout.segments[0].fan_out = 10;
        layout.segments[1].fan_in = 100;
        layout.segments[1].fan_out = 100;
        const SparseMask m = mask_erk(layout, 0.1, 2);
        const auto rows = layer_occupancy_report(m);
        CHECK(rows[0].fraction > rows[1].fraction);
        CHECK(m.ones() == 1010); // round(0.1 * 10100) exactly
    }
    SUBCASE("density clipping redistributes") {
        // tiny very-connected layer saturates at density 1
        LayerLayout layout = synthetic_layout({{"tiny.weight", 4}, {"big.weight", 1000}});
        layout.segments[0].fan_in = 2;
        layout.segments[0].fan_out = 2;
        layout.segments[1].fan_in = 50;
        layout.segments[1].fan_out = 20;
        const SparseMask m = mask_erk(layout, 0.5, 4);
        CHECK(m.ones() == 502);
        const auto rows = layer_occupancy_report(m);
        CHECK(rows[0].fraction == doctest::Approx(1.0));
    }
}

TEST_CASE("snip saliency") {
    ModelSpec spec;
    spec.arch = Arch::mlp2;
    spec.input_rows = 2;
    spec.input_cols = 3;
    spec.hidden = 4;
    spec.num_classes = 3;
    Model m = init_model(spec, 1);
    m.params[0] = 0.0; // zero weight -> zero saliency regardless of gradient

    Dataset ds;
    ds.input_dim = 6;
    ds.num_classes = 3;
    Rng rng(2);
    ds.inputs.resize(12);
    for (auto& x : ds.inputs) x = rng.uniform();
    ds.labels = {0, 2};
    const std::vector<std::size_t> batch{0, 1};

    const ParamVector s = snip_saliency(m, ds, batch);
    const LossGrad lg = loss_and_grad(m, ds, batch);
    CHECK(s[0] == 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(s[i] >= 0.0);
        CHECK(s[i] == doctest::Approx(std::abs(m.params[i] * lg.grad[i])));
    }
}

TEST_CASE("sparsity schedule") {
    CHECK(sparsity_schedule(1000, 10, 2, 0) == 1000);
    CHECK(sparsity_schedule(1000, 10, 2, 2) == 10);
    CHECK(sparsity_schedule(1000, 10, 2, 1) == 100); // geometric mean

    for (std::size_t d : {std::size_t{50}, std::size_t{1000}, std::size_t{50816}}) {
        for (std::size_t kappa : {std::size_t{1}, std::size_t{7}, std::size_t{49}}) {
            const int T = 10;
            std::size_t prev = d;
            for (int t = 0; t <= T; ++t) {
                const std::size_t k_t = sparsity_schedule(d, kappa, T, t);
                CHECK(k_t <= prev);
                CHECK(k_t >= kappa);
                CHECK(k_t <= d);
                prev = k_t;
            }
            CHECK(sparsity_schedule(d, kappa, T, 0) == d);
            CHECK(sparsity_schedule(d, kappa, T, T) == kappa);
        }
    }
    CHECK_THROWS_AS(sparsity_schedule(10, 11, 2, 0), DimensionError);
    CHECK_THROWS_AS(sparsity_schedule(10, 5, 2, 3), DimensionError);
}

TEST_CASE("force selection core") {
    const LayerLayout layout = synthetic_layout({{"w.weight", 3}});

    SUBCASE("single step picks the top-saliency coordinate") {
        // theta = [3, -1, 0.5] with a constant unit gradient
        auto saliency = [](const std::vector<std::uint8_t>&, int, int) {
            return ParamVector{3.0, 1.0, 0.5};
        };
        const SparseMask m = force_prune_with(layout, saliency, 1, 1, 1, {});
        CHECK(m.bits[0] == 1);
        CHECK(m.ones() == 1);
    }
    SUBCASE("kappa = d_w keeps all weights regardless of saliency") {
        auto saliency = [](const std::vector<std::uint8_t>&, int, int) {
            return ParamVector{0.0, 0.0, 0.0};
        };
        const SparseMask m = force_prune_with(layout, saliency, 2, 3, 4, {});
        CHECK(m.ones() == 3);
    }
    SUBCASE("consensus averages client saliencies in fixed order") {
        auto saliency = [](const std::vector<std::uint8_t>&, int, int client) {
            // client 0 prefers coord 1, client 1 strongly prefers coord 2
            return client == 0 ? ParamVector{0.1, 5.0, 0.0} : ParamVector{0.1, 0.0, 9.0};
        };
        const SparseMask m = force_prune_with(layout, saliency, 2, 1, 1, {});
        CHECK(m.bits[2] == 1); // mean saliency [0.1, 2.5, 4.5]
    }
    SUBCASE("final-step selection optimality without caps") {
        const LayerLayout big = synthetic_layout({{"w.weight", 40}});
        Rng rng(5);
        ParamVector fixed(40);
        for (auto& x : fixed) x = rng.uniform();
        auto saliency = [&](const std::vector<std::uint8_t>&, int, int) { return fixed; };
        const SparseMask m = force_prune_with(big, saliency, 3, 12, 4, {});
        double min_sel = 1e9, max_unsel = -1e9;
        for (std::size_t i = 0; i < 40; ++i) {
            if (m.bits[i])
                min_sel = std::min(min_sel, fixed[i]);
            else
                max_unsel = std::max(max_unsel, fixed[i]);
        }
        CHECK(min_sel >= max_unsel);
    }
    SUBCASE("ties break toward the lower coordinate index") {
        auto saliency = [](const std::vector<std::uint8_t>&, int, int) {
            return ParamVector{1.0, 1.0, 1.0};
        };
        const SparseMask m = force_prune_with(layout, saliency, 1, 2, 1, {});
        CHECK(m.bits[0] == 1);
        CHECK(m.bits[1] == 1);
        CHECK(m.bits[2] == 0);
    }
}

TEST_CASE("force caps") {
    const LayerLayout layout = synthetic_layout({{"a.weight", 20}, {"fc.weight", 20}});
    // saliency heavily favors the fc segment
    auto saliency = [](const std::vector<std::uint8_t>&, int, int) {
        ParamVector s(40, 0.1);
        for (std::size_t i = 20; i < 40; ++i) s[i] = 10.0 + static_cast<double>(i);
        return s;
    };

    SUBCASE("uncapped run concentrates in fc") {
        const SparseMask m = force_prune_with(layout, saliency, 1, 10, 3, {});
        CHECK(layer_occupancy_report(m)[1].ones == 10);
    }
    SUBCASE("cap limits fc and budget spills to the other segment") {
        const std::map<std::string, double> caps{{"fc.weight", 0.25}};
        const SparseMask m = force_prune_with(layout, saliency, 1, 10, 3, caps);
        CHECK(m.ones() == 10);
        const auto rows = layer_occupancy_report(m);
        CHECK(rows[1].ones == 5); // floor(0.25 * 20)
        CHECK(rows[0].ones == 5);
        CHECK(rows[1].fraction <= 0.25 + 1.0 / 20);
    }
    SUBCASE("infeasible caps throw") {
        const std::map<std::string, double> caps{{"a.weight", 0.1}, {"fc.weight", 0.1}};
        CHECK_THROWS_AS(force_prune_with(layout, saliency, 1, 10, 3, caps), InfeasibleError);
    }
    SUBCASE("unknown capped segment throws") {
        const std::map<std::string, double> caps{{"zzz", 0.5}};
        CHECK_THROWS_AS(force_prune_with(layout, saliency, 1, 4, 2, caps), DimensionError);
    }
}

TEST_CASE("model-backed force prune is deterministic and exact") {
    ModelSpec spec;
    spec.arch = Arch::mlp2;
    spec.input_rows = 4;
    spec.input_cols = 4;
    spec.hidden = 6;
    spec.num_classes = 4;
    const Model m = init_model(spec, 3);
    const Dataset data = synthetic_blobs(4, 30, 16, 0.2, 9);

    const std::size_t kappa = 12;
    const SparseMask a = force_prune(m, data, 3, 8, kappa, 4, {}, 11);
    const SparseMask b = force_prune(m, data, 3, 8, kappa, 4, {}, 11);
    CHECK(a.bits == b.bits);
    CHECK(a.ones() == kappa);

    const SparseMask c = force_prune(m, data, 3, 8, kappa, 4, {}, 12);
    CHECK(a.ones() == c.ones());

    Dataset empty;
    empty.input_dim = 16;
    empty.num_classes = 4;
    CHECK_THROWS_AS(force_prune(m, empty, 3, 8, kappa, 4, {}, 1), DimensionError);
}

TEST_CASE("occupancy accounting identity") {
    const LayerLayout layout =
        synthetic_layout({{"a.weight", 12}, {"a.bias", 4}, {"b.weight", 8}});
    const SparseMask m = mask_random_global(layout, 0.4, 3);
    const auto rows = layer_occupancy_report(m);
    double weighted = 0.0;
    for (std::size_t s = 0; s < rows.size(); ++s)
        weighted += rows[s].fraction * static_cast<double>(layout.segments[s].length);
    CHECK(weighted / static_cast<double>(layout.dim()) == doctest::Approx(m.delta));

    const SparseMask zero = mask_random_global(layout, 0.0, 3);
    for (const auto& row : layer_occupancy_report(zero)) CHECK(row.fraction == 0.0);
}

TEST_CASE("sbmk round trip") {
    const LayerLayout layout = synthetic_layout({{"a.weight", 30}, {"b.weight", 20}});
    const SparseMask m = mask_random_global(layout, 0.3, 21);
    const std::string path = "/tmp/fedsim_test_mask.sbmk";
    write_mask(m, path);

    const SparseMask back = read_mask(path, layout);
    CHECK(back.bits == m.bits);
    CHECK(back.delta == m.delta);

    std::ifstream side(path + ".txt");
    CHECK(side.good());

    // same flags and seed produce byte-identical files
    write_mask(mask_random_global(layout, 0.3, 21), "/tmp/fedsim_test_mask2.sbmk");
    std::ifstream f1(path, std::ios::binary), f2("/tmp/fedsim_test_mask2.sbmk", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // wrong magic
    std::ofstream bad("/tmp/fedsim_test_mask_bad.sbmk", std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(read_mask("/tmp/fedsim_test_mask_bad.sbmk", layout), DataError);

    std::remove(path.c_str());
    std::remove((path + ".txt").c_str());
    std::remove("/tmp/fedsim_test_mask2.sbmk");
    std::remove("/tmp/fedsim_test_mask2.sbmk.txt");
    std::remove("/tmp/fedsim_test_mask_bad.sbmk");
}
