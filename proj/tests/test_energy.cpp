#include "doctest.h"

#include "spikeattn/energy.hpp"
#include "test_util.hpp"

using namespace spikeattn;

TEST_SUITE_BEGIN("energy");

TEST_CASE("conv flop formulas") {
    SUBCASE("pointwise conv2d is one MAC") {
        CHECK(flops_conv({1, 1, 1, 1, 1, 1, 1, 1}, CountMode::Exact) == 1);
        CHECK(flops_conv({1, 1, 1, 1, 1, 1, 1, 1}, CountMode::Paper) == 1);
    }
    SUBCASE("paper mode uses k^2") {
        ConvGeometry g{3, 3, 3, 8, 8, 8, 4, 8};
        CHECK(flops_conv(g, CountMode::Paper) == 147456);
        CHECK(flops_conv(g, CountMode::Exact) == 442368);
    }
    SUBCASE("modes differ by exactly the temporal kernel extent for cubic kernels") {
        for (int k : {1, 3, 5}) {
            ConvGeometry g{k, k, k, 6, 5, 4, 3, 7};
            CHECK(flops_conv(g, CountMode::Exact) == k * flops_conv(g, CountMode::Paper));
        }
    }
    SUBCASE("bad geometry rejected") {
        CHECK_THROWS_AS(flops_conv({0, 1, 1, 1, 1, 1, 1, 1}, CountMode::Exact), ArgumentError);
    }
}

TEST_CASE("sops formula") {
    CHECK(sops(123456, 0.0, 4) == 0);
    CHECK(sops(1000000, 0.05, 4) == 200000);
    CHECK(sops(777, 1.0, 1) == 777);
    CHECK_THROWS_AS(sops(10, 1.5, 4), ArgumentError);
    CHECK_THROWS_AS(sops(10, -0.1, 4), ArgumentError);
    SUBCASE("monotone in each argument") {
        CHECK(sops(1000, 0.3, 4) <= sops(1000, 0.4, 4));
        CHECK(sops(1000, 0.3, 4) <= sops(1000, 0.3, 8));
        CHECK(sops(1000, 0.3, 4) <= sops(2000, 0.3, 4));
    }
}

TEST_CASE("energy conversion hits the published headline") {
    SUBCASE("Table 1 row") {
        double e = energy(290e6, 3.7e6);
        CHECK(e == doctest::Approx(1.337e-3).epsilon(0.005));
    }
    SUBCASE("zero counts cost nothing") { CHECK(energy(0, 0) == 0.0); }
    SUBCASE("ANN-only matches the single-timestep row") {
        CHECK(energy(290e6, 0) == doctest::Approx(1.334e-3).epsilon(0.005));
    }
    SUBCASE("SOPs scale linearly in T_s at fixed rate") {
        auto total = [](int ts) { return energy(290e6, 0.925e6 * ts); };
        CHECK(total(16) - total(1) == doctest::Approx(4.0 * (total(4) - total(1))));
    }
}

TEST_CASE("audit of a tiny model") {
    ModelConfig c;
    c.d_model = 8;
    c.n_blocks = 2;
    c.t_s = 2;
    c.n_heads = 2;
    c.in_t = 8;
    c.in_h = 8;
    c.in_w = 8;
    Model m(c, 71);
    testutil::Rng rng(72);
    Tensor clip = testutil::random_tensor(Shape{3, 8, 8, 8}, rng);
    EnergyReport rep = audit(m, clip);

    SUBCASE("Eq 33 identity holds for the totals") {
        CostModel cm;
        CHECK(rep.total_energy_j ==
              doctest::Approx(cm.e_mac * rep.total_flops + cm.e_ac * rep.total_sops).epsilon(1e-12));
        double sum_rows = 0.0;
        for (const auto& r : rep.rows) sum_rows += r.energy_j;
        CHECK(sum_rows == doctest::Approx(rep.total_energy_j).epsilon(1e-9));
    }
    SUBCASE("ANN rows carry no SOPs and SNN rows no standalone MAC energy") {
        for (const auto& r : rep.rows) {
            if (!r.snn) CHECK(r.sop_count == 0);
            if (r.snn) CHECK(r.energy_j == doctest::Approx(0.9e-12 * r.sop_count));
        }
    }
    SUBCASE("the default V path performs no multiplies") {
        for (const auto& r : rep.rows) CHECK(r.layer.find(".v.") == std::string::npos);
    }
    SUBCASE("parameters counted exactly") {
        CHECK(rep.param_count == m.param_count());
        int64_t manual = 0;
        for (const auto& p : m.params()) manual += p.value.numel();
        CHECK(rep.param_count == manual);
    }
    SUBCASE("stem and head are ANN, block internals SNN") {
        int ann = 0, snn = 0;
        for (const auto& r : rep.rows) {
            if (r.layer.rfind("stem.", 0) == 0 || r.layer.rfind("head.", 0) == 0) {
                CHECK(!r.snn);
                ann++;
            }
            if (r.layer.rfind("block", 0) == 0) {
                CHECK(r.snn);
                snn++;
            }
        }
        CHECK(ann == 7);   // 4 stem convs + 2 head convs + final projection
        CHECK(snn >= 8);   // q/k projections, mask sums, out convs, mlp linears
    }
}

TEST_CASE("compare_tdsa reproduces the published per-block energies") {
    CompareGeometry g;   // N=640, D=96, T_s=4, 160 frames
    CompareFireRates fr; // rates required to match (within the 5% criterion)
    SUBCASE("TDSA block near 10.13 uJ") {
        CompareResult r = compare_tdsa(g, fr);
        CHECK(r.tdsa.block_j == doctest::Approx(10.13e-6).epsilon(0.05));
    }
    SUBCASE("full-projection S3A near 1.52 uJ") {
        CompareResult r = compare_tdsa(g, fr, Proj::TDC, Proj::TDC, Proj::Conv3D);
        CHECK(r.s3a.block_j == doctest::Approx(1.52e-6).epsilon(0.05));
    }
    SUBCASE("default variant near 0.83 uJ and ratio at least 6x") {
        CompareResult r = compare_tdsa(g, fr, Proj::TDC, Proj::Conv3D, Proj::None);
        CHECK(r.s3a.block_j == doctest::Approx(0.83e-6).epsilon(0.05));
        CHECK(r.ratio >= 6.0);
    }
    SUBCASE("zero mask density removes the attention accumulates") {
        CompareFireRates z = fr;
        z.f_mask = 0.0;
        CompareResult r = compare_tdsa(g, z);
        CHECK(r.s3a.attention_j == 0.0);
    }
}

TEST_SUITE_END();
