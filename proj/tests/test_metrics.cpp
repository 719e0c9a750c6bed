#include "doctest.h"

#include "spikeattn/metrics.hpp"
#include "test_util.hpp"

using namespace spikeattn;

TEST_SUITE_BEGIN("metrics");

static PulseWave sinusoid(double freq_hz, int n, double fps, double amp = 1.0) {
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / fps);
    return PulseWave{std::move(s), fps};
}

static double rms(const std::vector<double>& v, int skip) {
    double acc = 0.0;
    int n = 0;
    for (size_t i = skip; i + skip < v.size(); ++i) {
        acc += v[i] * v[i];
        n++;
    }
    return std::sqrt(acc / n);
}

TEST_CASE("bandpass amplitude follows the designed response") {
    IirFilter f = detail_dsp::butter2_bandpass(kBandLow, kBandHigh, 30.0);
    SUBCASE("passband center within 5% of unity") {
        PulseWave in = sinusoid(1.5, 900, 30.0);
        PulseWave out = bandpass(in);
        // forward-backward squares the magnitude response
        double expect = std::pow(detail_dsp::freq_response_mag(f, 1.5, 30.0), 2);
        CHECK(expect > 0.9);  // oracle sanity
        double measured = rms(out.samples, 100) / rms(in.samples, 100);
        CHECK(measured == doctest::Approx(1.0).epsilon(0.05));
        CHECK(measured == doctest::Approx(expect).epsilon(0.02));
    }
    SUBCASE("0.2 Hz attenuated by at least 15 dB") {
        PulseWave in = sinusoid(0.2, 900, 30.0);
        PulseWave out = bandpass(in);
        double expect_db = -40.0 * std::log10(1.0 / detail_dsp::freq_response_mag(f, 0.2, 30.0));
        (void)expect_db;
        double gain = rms(out.samples, 100) / rms(in.samples, 100);
        CHECK(20.0 * std::log10(gain) < -15.0);
    }
    SUBCASE("zero in, zero out") {
        PulseWave z{std::vector<double>(300, 0.0), 30.0};
        for (double v : bandpass(z).samples) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("too-low sampling rate rejected") {
        CHECK_THROWS_AS(bandpass(PulseWave{std::vector<double>(100, 0.0), 4.0}), SignalError);
    }
}

TEST_CASE("bandpass is linear") {
    testutil::Rng rng(31);
    std::vector<double> x(400), y(400);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    const double a = 1.7, b = -0.4;
    std::vector<double> combo(400);
    for (int i = 0; i < 400; ++i) combo[i] = a * x[i] + b * y[i];
    auto fx = bandpass(PulseWave{x, 30.0}).samples;
    auto fy = bandpass(PulseWave{y, 30.0}).samples;
    auto fc = bandpass(PulseWave{combo, 30.0}).samples;
    for (int i = 0; i < 400; ++i) CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) < 1e-5);
}

TEST_CASE("estimate_hr finds 90 bpm for a 1.5 Hz sinusoid") {
    PulseWave w = sinusoid(1.5, 900, 30.0);
    CHECK(std::abs(estimate_hr(w).bpm - 90.0) <= 0.5);
}

TEST_CASE("estimate_hr is invariant under positive scaling") {
    PulseWave w = sinusoid(1.2, 600, 30.0);
    PulseWave w10 = sinusoid(1.2, 600, 30.0, 10.0);
    CHECK(estimate_hr(w).bpm == estimate_hr(w10).bpm);
}

TEST_CASE("estimate_hr tie breaks toward the lower frequency") {
    // exactly equal powers at 60 and 120 bpm: the scan must keep the lower bin
    std::vector<std::pair<double, double>> spectrum = {
        {0.9, 1.0}, {1.0, 7.5}, {1.4, 2.0}, {2.0, 7.5}, {2.3, 0.5}};
    CHECK(spectral_peak_index(spectrum) == 1);
    CHECK(spectrum[spectral_peak_index(spectrum)].first == doctest::Approx(1.0));
}

TEST_CASE("estimate_hr rejects too-short input") {
    CHECK_THROWS_AS(estimate_hr(sinusoid(1.5, 50, 30.0)), ArgumentError);
}

TEST_CASE("metric formulas") {
    SUBCASE("perfect prediction") {
        MetricReport r = metrics({60, 80, 100}, {60, 80, 100});
        CHECK(r.mae == 0.0);
        CHECK(r.mape == 0.0);
        CHECK(r.rho.value() == doctest::Approx(1.0));
    }
    SUBCASE("hand-computed MAE and MAPE") {
        MetricReport r = metrics({62, 78}, {60, 80});
        CHECK(r.mae == doctest::Approx(2.0));
        CHECK(r.mape == doctest::Approx(2.9167).epsilon(1e-4));
    }
    SUBCASE("anticorrelation") {
        MetricReport r = metrics({80, 60}, {60, 80});
        CHECK(r.rho.value() == doctest::Approx(-1.0));
    }
    SUBCASE("rho identities") {
        std::vector<double> x = {61, 72, 88, 95, 103};
        CHECK(std::abs(pearson_plain(x, x) - 1.0) < 1e-12);
        std::vector<double> nx = x;
        for (double& v : nx) v = -v;
        CHECK(std::abs(pearson_plain(x, nx) + 1.0) < 1e-12);
    }
    SUBCASE("zero ground truth rejected for MAPE") {
        CHECK_THROWS_AS(metrics({1.0}, {0.0}), ArgumentError);
    }
}

TEST_CASE("bland-altman") {
    SUBCASE("identical series collapse to zero") {
        BlandAltman ba = bland_altman({60, 70, 80}, {60, 70, 80});
        CHECK(ba.bias == 0.0);
        CHECK(ba.limit_low == 0.0);
        CHECK(ba.limit_high == 0.0);
    }
    SUBCASE("constant offset") {
        BlandAltman ba = bland_altman({63, 73, 83}, {60, 70, 80});
        CHECK(ba.bias == doctest::Approx(3.0));
        CHECK(ba.limit_high == doctest::Approx(3.0));
    }
    SUBCASE("two-point case pins the 1.96 factor") {
        // diffs {1, 3}: bias 2, population std 1 -> limits 2 -/+ 1.96
        BlandAltman ba = bland_altman({61, 73}, {60, 70});
        CHECK(ba.bias == doctest::Approx(2.0));
        CHECK(ba.limit_low == doctest::Approx(0.04));
        CHECK(ba.limit_high == doctest::Approx(3.96));
        CHECK(ba.rows[0].first == doctest::Approx(60.5));
        CHECK(ba.rows[0].second == doctest::Approx(1.0));
    }
    SUBCASE("one pair is not enough") {
        CHECK_THROWS_AS(bland_altman({60.0}, {61.0}), ArgumentError);
    }
}

TEST_SUITE_END();
