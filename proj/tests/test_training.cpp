#include "doctest.h"

#include "spikeattn/training.hpp"
#include "test_util.hpp"

using namespace spikeattn;

TEST_SUITE_BEGIN("training");

TEST_CASE("negative pearson loss") {
    Tensor gt(Shape{5}, {1, 2, 4, 3, 5});
    SUBCASE("perfect match") { CHECK(loss_time(gt, gt).item() == doctest::Approx(0.0)); }
    SUBCASE("perfect anticorrelation") {
        Tensor neg = scale(gt, -1.0);
        CHECK(loss_time(neg, gt).item() == doctest::Approx(2.0));
    }
    SUBCASE("positive affine invariance") {
        Tensor aff = add_const(scale(gt, 2.0), 5.0);
        CHECK(loss_time(aff, gt).item() == doctest::Approx(0.0));
    }
    SUBCASE("constant input is degenerate") {
        CHECK_THROWS_AS(loss_time(Tensor::full(Shape{5}, 1.0), gt), SignalError);
    }
}

TEST_CASE("beta schedule") {
    LossWeights w;
    w.beta0 = 1.0;
    w.eta = 5.0;
    w.epoch_total = 10;
    SUBCASE("first epoch returns beta0") {
        w.epoch_current = 1;
        CHECK(beta_schedule(w) == doctest::Approx(1.0));
    }
    SUBCASE("hypothetical epoch past the end hits eta") {
        w.epoch_current = 11;
        CHECK(beta_schedule(w) == doctest::Approx(5.0));
    }
    SUBCASE("eta 1 is constant") {
        w.eta = 1.0;
        for (int e = 1; e <= 10; ++e) {
            w.epoch_current = e;
            CHECK(beta_schedule(w) == doctest::Approx(1.0));
        }
    }
    SUBCASE("non-decreasing in the epoch for eta >= 1") {
        double prev = 0.0;
        for (int e = 1; e <= 10; ++e) {
            w.epoch_current = e;
            double b = beta_schedule(w);
            CHECK(b >= prev);
            prev = b;
        }
    }
}

TEST_CASE("frequency losses") {
    LossWeights w;
    const int bins = w.hr_hi - w.hr_lo + 1;
    SUBCASE("uniform spectrum gives ce = log(#bins)") {
        Tensor logits = Tensor::full(Shape{bins}, 1.0 / bins);
        FreqLoss fl = freq_losses_from_logits(logits, 30, gaussian_label(70.0, w));
        CHECK(fl.ce.item() == doctest::Approx(std::log(static_cast<double>(bins))));
    }
    SUBCASE("ld vanishes exactly when the prediction matches the label") {
        std::vector<double> label = gaussian_label(72.0, w);
        std::vector<double> lv(bins);
        for (int b = 0; b < bins; ++b) lv[b] = std::log(std::max(label[b], 1e-300));
        FreqLoss fl = freq_losses_from_logits(Tensor(Shape{bins}, lv), 32, label);
        CHECK(std::abs(fl.ld.item()) < 1e-9);
    }
    SUBCASE("ld is positive when they differ") {
        Tensor logits = Tensor::full(Shape{bins}, 1.0 / bins);
        FreqLoss fl = freq_losses_from_logits(logits, 32, gaussian_label(72.0, w));
        CHECK(fl.ld.item() > 0.1);
    }
    SUBCASE("pure sinusoid at gt_hr puts the argmax on the gt bin") {
        const double fps = 30.0, hr = 84.0;
        std::vector<double> s(600);
        for (int i = 0; i < 600; ++i) s[i] = std::sin(2.0 * M_PI * hr / 60.0 * i / fps);
        Tensor power = bpm_power(center(Tensor(Shape{600}, s)), fps, w.hr_lo, w.hr_hi);
        int argmax = 0;
        for (int b = 0; b < bins; ++b)
            if (power.values()[b] > power.values()[argmax]) argmax = b;
        CHECK(argmax == static_cast<int>(hr) - w.hr_lo);
    }
    SUBCASE("gt_hr outside the bin range is rejected") {
        Tensor pred = Tensor(Shape{64}, std::vector<double>(64, 0.1));
        CHECK_THROWS_AS(loss_freq(pred, 30.0, 192.0, w), ArgumentError);
    }
}

static ModelConfig smoke_config() {
    ModelConfig c;
    c.d_model = 8;
    c.n_blocks = 1;
    c.t_s = 2;
    c.n_heads = 2;
    c.mlp_ratio = 2.0;
    c.in_t = 64;
    c.in_h = 16;
    c.in_w = 16;
    return c;
}

static StoredClip smoke_clip(double hr, uint64_t seed) {
    SynthSpec spec;
    spec.hr_bpm = hr;
    spec.face_box = {2, 2, 14, 14};
    spec.noise_std = 0.002;
    spec.seed = seed;
    auto [clip, wave] = synthesize(spec, 64, 16, 16, 30.0);
    StoredClip sc;
    sc.clip = std::move(clip);
    sc.wave = std::move(wave);
    sc.hr_bpm = hr;
    return sc;
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    Model m(smoke_config(), 61);
    std::vector<std::vector<double>> before;
    for (const auto& p : m.params()) before.push_back(p.value.values());
    TrainConfig tc;
    tc.lr = 0.0;
    tc.weight_decay = 5e-5;
    tc.epochs = 1;
    tc.batch_size = 2;
    std::vector<TrainSample> train_set = {make_train_sample(smoke_clip(70, 1)),
                                          make_train_sample(smoke_clip(90, 2))};
    train(m, train_set, {}, tc);
    for (size_t i = 0; i < m.params().size(); ++i) CHECK(m.params()[i].value.values() == before[i]);
}

TEST_CASE("single-sample overfit decreases the time loss on average") {
    Model m(smoke_config(), 62);
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.epochs = 1;
    TrainSample s = make_train_sample(smoke_clip(80, 3));
    Adam opt(m, tc);
    LossWeights w = tc.loss;
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        StepLosses sl = train_step(m, opt, {&s}, w);
        losses.push_back(sl.l_time);
    }
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) head += losses[i];
    for (int i = 40; i < 50; ++i) tail += losses[i];
    CHECK(tail / 10.0 < head / 10.0);
}

TEST_CASE("fixed seed reproduces the training history bit for bit") {
    auto run = [&]() {
        Model m(smoke_config(), 63);
        TrainConfig tc;
        tc.epochs = 2;
        tc.batch_size = 2;
        tc.seed = 9;
        std::vector<TrainSample> train_set = {make_train_sample(smoke_clip(60, 4)),
                                              make_train_sample(smoke_clip(75, 5)),
                                              make_train_sample(smoke_clip(95, 6))};
        std::vector<EvalSample> val_set = {make_eval_sample(smoke_clip(85, 7))};
        TrainResult r = train(m, train_set, val_set, tc);
        return history_csv(r.history);
    };
    CHECK(run() == run());
}

TEST_SUITE_END();
