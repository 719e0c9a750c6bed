#include "doctest.h"

#include "spikeattn/spiking.hpp"
#include "test_util.hpp"

using namespace spikeattn;

TEST_SUITE_BEGIN("spiking");

static LifParams default_lif() { return LifParams{2.0, 1.0, 0.0, 2.0}; }

TEST_CASE("lif_step hand-evaluated cases") {
    LifParams p = default_lif();
    LifState s{Tensor::zeros(Shape{1})};
    SUBCASE("quiescent") {
        auto [spike, next] = lif_step(Tensor::zeros(Shape{1}), s, p);
        CHECK(spike.values.values()[0] == 0.0);
        CHECK(next.v.values()[0] == doctest::Approx(0.0));
    }
    SUBCASE("X=2 crosses threshold and resets") {
        auto [spike, next] = lif_step(Tensor(Shape{1}, {2.0}), s, p);
        CHECK(spike.values.values()[0] == 1.0);
        CHECK(next.v.values()[0] == doctest::Approx(0.0));
    }
    SUBCASE("X=1 charges to 0.5 without firing") {
        auto [spike, next] = lif_step(Tensor(Shape{1}, {1.0}), s, p);
        CHECK(spike.values.values()[0] == 0.0);
        CHECK(next.v.values()[0] == doctest::Approx(0.5));
    }
    SUBCASE("shape mismatch") {
        LifState bad{Tensor::zeros(Shape{2})};
        CHECK_THROWS_AS(lif_step(Tensor::zeros(Shape{1}), bad, p), DimensionError);
    }
}

TEST_CASE("lif_sequence hand iterations") {
    LifParams p = default_lif();
    SUBCASE("all-zero input stays silent") {
        SpikeTensor s = lif_sequence(Tensor::zeros(Shape{4, 3}), p);
        for (double v : s.values.values()) CHECK(v == 0.0);
    }
    SUBCASE("X=[1,1] charges 0.5 then 0.75 without spiking") {
        SpikeTensor s = lif_sequence(Tensor(Shape{2, 1}, {1.0, 1.0}), p);
        CHECK(s.values.values() == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("X=[2,2] fires twice with reset in between") {
        SpikeTensor s = lif_sequence(Tensor(Shape{2, 1}, {2.0, 2.0}), p);
        CHECK(s.values.values() == std::vector<double>{1.0, 1.0});
    }
    SUBCASE("empty sequence rejected") {
        CHECK_THROWS_AS(lif_sequence(Tensor(Shape{}, {1.0}), p), ArgumentError);
    }
}

TEST_CASE("surrogate gradient values") {
    SUBCASE("at zero equals alpha/2") {
        Tensor g = surrogate_grad(Tensor::zeros(Shape{1}), 2.0);
        CHECK(g.values()[0] == doctest::Approx(1.0));
    }
    SUBCASE("at one equals 1/(1+pi^2)") {
        Tensor g = surrogate_grad(Tensor(Shape{1}, {1.0}), 2.0);
        CHECK(g.values()[0] == doctest::Approx(1.0 / (1.0 + M_PI * M_PI)));
    }
    SUBCASE("vanishes in the tails") {
        Tensor g = surrogate_grad(Tensor(Shape{2}, {-1e6, 1e6}), 2.0);
        CHECK(g.values()[0] == doctest::Approx(0.0));
        CHECK(g.values()[1] == doctest::Approx(0.0));
    }
}

TEST_CASE("surrogate matches finite differences of the smooth primitive") {
    // g(x) = atan((pi/2)*alpha*x)/pi + 1/2 on a grid over [-5,5]
    const double alpha = 2.0;
    auto primitive = [&](double x) { return std::atan(M_PI_2 * alpha * x) / M_PI + 0.5; };
    const double h = 1e-5;
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        double x = -5.0 + i * 0.01;
        double fd = (primitive(x + h) - primitive(x - h)) / (2.0 * h);
        double an = surrogate_grad(Tensor(Shape{1}, {x}), alpha).values()[0];
        worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), 1e-12));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("spike output is exactly binary for arbitrary inputs") {
    testutil::Rng rng(11);
    LifParams p = default_lif();
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = testutil::random_tensor(Shape{4, 3, 5}, rng, -4.0, 4.0);
        SpikeTensor s = lif_sequence(x, p);
        for (double v : s.values.values()) CHECK((v == 0.0 || v == 1.0));
        int64_t ones = 0;
        for (double v : s.values.values())
            if (v != 0.0) ones++;
        CHECK(s.fire_rate == doctest::Approx(static_cast<double>(ones) / s.values.numel()));
    }
}

TEST_CASE("zero input never fires regardless of tau and threshold") {
    testutil::Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        LifParams p{rng.uniform(0.5, 5.0), rng.uniform(0.1, 3.0), 0.0, 2.0};
        SpikeTensor s = lif_sequence(Tensor::zeros(Shape{6, 4}), p);
        for (double v : s.values.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("lif_sequence is deterministic") {
    testutil::Rng rng(17);
    Tensor x = testutil::random_tensor(Shape{4, 8}, rng, -2.0, 2.0);
    SpikeTensor a = lif_sequence(x, default_lif());
    SpikeTensor b = lif_sequence(x, default_lif());
    CHECK(a.values.values() == b.values.values());
}

TEST_CASE("direct encode replicates and sums gradients") {
    Tensor x(Shape{1}, {0.7});
    Tensor e = direct_encode(x, 3);
    CHECK(e.shape == Shape{3, 1});
    for (double v : e.values()) CHECK(v == doctest::Approx(0.7));
    CHECK(direct_encode(x, 1).shape == Shape{1, 1});
    CHECK_THROWS_AS(direct_encode(x, 0), ArgumentError);

    Tape tape;
    Tensor xl = tape.leaf(x);
    tape.backward(sum_all(direct_encode(xl, 3)));
    CHECK(tape.grad(xl).values()[0] == doctest::Approx(3.0));
}

TEST_CASE("fire rate counting") {
    CHECK(SpikeTensor(Tensor::zeros(Shape{4})).fire_rate == 0.0);
    CHECK(SpikeTensor(Tensor::full(Shape{4}, 1.0)).fire_rate == 1.0);
    CHECK(SpikeTensor(Tensor(Shape{8}, {1, 0, 0, 1, 0, 0, 1, 0})).fire_rate == doctest::Approx(0.375));
    CHECK_THROWS_AS(SpikeTensor(Tensor(Shape{0}, {})), ArgumentError);
}

TEST_CASE("binary-mode gradient equals the surrogate rule") {
    LifParams p = default_lif();
    Tape tape;
    Tensor x = tape.leaf(Tensor(Shape{3}, {0.4, 2.2, 1.4}));
    LifState s{Tensor::zeros(Shape{3})};
    auto [spike, next] = lif_step(x, s, p);
    tape.backward(sum_all(spike.values));
    // dS/dX = g'(H - v_th) * dH/dX = surrogate(H-1) / tau
    Tensor g = tape.grad(x);
    for (int i = 0; i < 3; ++i) {
        double h = x.values()[i] / 2.0;
        double expect = surrogate_grad(Tensor(Shape{1}, {h - 1.0}), p.alpha).values()[0] / 2.0;
        CHECK(g.values()[i] == doctest::Approx(expect));
    }
}

TEST_CASE("smooth mode matches finite differences through a two-step sequence") {
    testutil::Rng rng(23);
    Tensor x = testutil::random_tensor(Shape{2, 4}, rng, -2.0, 2.0);
    double err = testutil::fd_check(
        [&](Tape& t, const std::vector<Tensor>& in) {
            SpikeTensor s = lif_sequence(in[0], default_lif(), SpikeMode::Smooth);
            return sum_all(mul(s.values, s.values));
        },
        {x}, 1e-4);
    CHECK(err < 1e-3);
}

TEST_SUITE_END();
