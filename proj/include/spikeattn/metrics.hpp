#pragma once

// Post-processing and evaluation: second-order Butterworth bandpass
// (0.75-2.5 Hz) applied forward-backward, FFT spectral-peak heart rate, and
// MAE / MAPE / Pearson metrics with Bland-Altman export.

#include <complex>
#include <optional>

#include "spikeattn/video.hpp"

namespace spikeattn {

constexpr double kBandLow = 0.75;   // Hz
constexpr double kBandHigh = 2.5;   // Hz

struct HrEstimate {
    double bpm = 0.0;
    std::vector<std::pair<double, double>> spectrum;  // (freq Hz, power) inside the passband
};

struct MetricReport {
    double mae = 0.0;   // bpm
    double mape = 0.0;  // percent
    std::optional<double> rho;
    int n = 0;
};

// ---------------------------------------------------------------------------
// filter design + zero-phase filtering

struct IirFilter {
    std::vector<double> b, a;  // a[0] == 1
};

namespace detail_dsp {

// Order-2 Butterworth bandpass via analog prototype -> bandpass transform ->
// bilinear transform with prewarped edges. Returns a single 4th-order section.
inline IirFilter butter2_bandpass(double lo_hz, double hi_hz, double fs) {
    using cd = std::complex<double>;
    const double w1 = 2.0 * fs * std::tan(M_PI * lo_hz / fs);
    const double w2 = 2.0 * fs * std::tan(M_PI * hi_hz / fs);
    const double w0 = std::sqrt(w1 * w2), bw = w2 - w1;

    // prototype lowpass poles for n=2
    std::vector<cd> proto = {std::polar(1.0, 3.0 * M_PI / 4.0), std::polar(1.0, 5.0 * M_PI / 4.0)};
    std::vector<cd> s_poles;
    for (cd p : proto) {
        cd half = bw * p / 2.0;
        cd root = std::sqrt(half * half - cd(w0 * w0, 0.0));
        s_poles.push_back(half + root);
        s_poles.push_back(half - root);
    }
    // bilinear: z = (1 + s/(2fs)) / (1 - s/(2fs)); zeros go to +1 (x2), -1 (x2)
    std::vector<cd> z_poles;
    for (cd s : s_poles) z_poles.push_back((cd(2.0 * fs, 0.0) + s) / (cd(2.0 * fs, 0.0) - s));
    std::vector<cd> z_zeros = {cd(1, 0), cd(1, 0), cd(-1, 0), cd(-1, 0)};

    auto poly_from_roots = [](const std::vector<cd>& roots) {
        std::vector<cd> c = {cd(1, 0)};
        for (cd r : roots) {
            std::vector<cd> nc(c.size() + 1, cd(0, 0));
            for (size_t i = 0; i < c.size(); ++i) {
                nc[i] += c[i];
                nc[i + 1] -= c[i] * r;
            }
            c = nc;
        }
        return c;
    };
    std::vector<cd> bz = poly_from_roots(z_zeros), az = poly_from_roots(z_poles);

    IirFilter f;
    for (cd v : bz) f.b.push_back(v.real());
    for (cd v : az) f.a.push_back(v.real());
    // unity gain at the (warped) center frequency
    const double wc = 2.0 * std::atan(w0 / (2.0 * fs));
    cd num(0, 0), den(0, 0);
    for (size_t i = 0; i < f.b.size(); ++i) num += f.b[i] * std::polar(1.0, -wc * static_cast<double>(i));
    for (size_t i = 0; i < f.a.size(); ++i) den += f.a[i] * std::polar(1.0, -wc * static_cast<double>(i));
    double g = std::abs(den / num);
    for (double& v : f.b) v *= g;
    return f;
}

// |H(e^{j*2*pi*f/fs})| of a designed filter; the reference oracle for the
// attenuation tests.
inline double freq_response_mag(const IirFilter& f, double freq_hz, double fs) {
    using cd = std::complex<double>;
    const double w = 2.0 * M_PI * freq_hz / fs;
    cd num(0, 0), den(0, 0);
    for (size_t i = 0; i < f.b.size(); ++i) num += f.b[i] * std::polar(1.0, -w * static_cast<double>(i));
    for (size_t i = 0; i < f.a.size(); ++i) den += f.a[i] * std::polar(1.0, -w * static_cast<double>(i));
    return std::abs(num / den);
}

// Steady-state initial conditions for a unit-amplitude input step
// (direct-form II transposed), scipy lfilter_zi equivalent.
inline std::vector<double> lfilter_zi(const IirFilter& f) {
    const int m = static_cast<int>(f.a.size()) - 1;
    // Solve (I - C^T) zi = B with C the companion matrix of a: C^T has -a[1:]
    // in its first column and ones on the superdiagonal.
    std::vector<std::vector<double>> M(m, std::vector<double>(m, 0.0));
    for (int i = 0; i < m; ++i) M[i][i] = 1.0;
    for (int i = 0; i < m; ++i) M[i][0] += f.a[i + 1];
    for (int i = 0; i + 1 < m; ++i) M[i][i + 1] -= 1.0;
    std::vector<double> B(m);
    for (int i = 0; i < m; ++i) B[i] = f.b[i + 1] - f.a[i + 1] * f.b[0];
    // Gaussian elimination with partial pivoting.
    std::vector<int> piv(m);
    for (int c = 0; c < m; ++c) {
        int p = c;
        for (int r = c + 1; r < m; ++r)
            if (std::abs(M[r][c]) > std::abs(M[p][c])) p = r;
        std::swap(M[c], M[p]);
        std::swap(B[c], B[p]);
        for (int r = c + 1; r < m; ++r) {
            double k = M[r][c] / M[c][c];
            for (int j = c; j < m; ++j) M[r][j] -= k * M[c][j];
            B[r] -= k * B[c];
        }
    }
    std::vector<double> zi(m);
    for (int r = m - 1; r >= 0; --r) {
        double s = B[r];
        for (int j = r + 1; j < m; ++j) s -= M[r][j] * zi[j];
        zi[r] = s / M[r][r];
    }
    return zi;
}

inline std::vector<double> lfilter(const IirFilter& f, const std::vector<double>& x,
                                   const std::vector<double>& zi) {
    const int m = static_cast<int>(f.a.size()) - 1;
    std::vector<double> z(zi), y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double yi = f.b[0] * x[i] + z[0];
        for (int j = 0; j < m - 1; ++j) z[j] = f.b[j + 1] * x[i] + z[j + 1] - f.a[j + 1] * yi;
        z[m - 1] = f.b[m] * x[i] - f.a[m] * yi;
        y[i] = yi;
    }
    return y;
}

}  // namespace detail_dsp

// Zero-phase (forward-backward) bandpass with odd-reflection edge padding of
// 3x the full filter length.
inline PulseWave bandpass(const PulseWave& wave) {
    if (wave.fps <= 5.0) throw SignalError("bandpass: sampling rate must exceed 5 fps for the 0.75-2.5 Hz passband");
    IirFilter f = detail_dsp::butter2_bandpass(kBandLow, kBandHigh, wave.fps);
    const int padlen = 3 * static_cast<int>(f.a.size());
    const int n = static_cast<int>(wave.samples.size());
    if (n <= padlen) throw ArgumentError("bandpass: signal too short for edge padding (" + std::to_string(n) + ")");
    const auto& x = wave.samples;
    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (int i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (int i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    std::vector<double> zi = detail_dsp::lfilter_zi(f);
    auto scaled = [&](double v) {
        std::vector<double> z(zi);
        for (double& e : z) e *= v;
        return z;
    };
    std::vector<double> y = detail_dsp::lfilter(f, ext, scaled(ext.front()));
    std::reverse(y.begin(), y.end());
    y = detail_dsp::lfilter(f, y, scaled(y.front()));
    std::reverse(y.begin(), y.end());
    return PulseWave{std::vector<double>(y.begin() + padlen, y.begin() + padlen + n), wave.fps};
}

// ---------------------------------------------------------------------------
// spectral heart-rate estimate

namespace detail_dsp {

inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                auto u = a[i + k], v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace detail_dsp

// argmax over (freq, power) pairs; exact power ties keep the lower frequency.
inline size_t spectral_peak_index(const std::vector<std::pair<double, double>>& spectrum) {
    if (spectrum.empty()) throw SignalError("spectral_peak_index: empty spectrum");
    size_t best = 0;
    for (size_t k = 1; k < spectrum.size(); ++k)
        if (spectrum[k].second > spectrum[best].second) best = k;
    return best;
}

// Periodogram of the zero-mean signal, zero-padded so bin spacing <= 0.5 bpm;
// peak within [0.75, 2.5] Hz, ties broken toward the lower frequency.
inline HrEstimate estimate_hr(const PulseWave& wave) {
    const int n = static_cast<int>(wave.samples.size());
    if (n < 2 * wave.fps) throw ArgumentError("estimate_hr: need at least 2 seconds of signal");
    size_t nfft = 1;
    const double min_bins = wave.fps * 60.0 / 0.5;  // bins for 0.5 bpm spacing
    while (nfft < static_cast<size_t>(min_bins) || nfft < static_cast<size_t>(n)) nfft <<= 1;
    double mean = 0.0;
    for (double v : wave.samples) mean += v;
    mean /= n;
    std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
    for (int i = 0; i < n; ++i) buf[i] = {wave.samples[i] - mean, 0.0};
    detail_dsp::fft_inplace(buf);

    HrEstimate est;
    for (size_t k = 1; k <= nfft / 2; ++k) {
        double freq = wave.fps * static_cast<double>(k) / static_cast<double>(nfft);
        if (freq < kBandLow || freq > kBandHigh) continue;
        est.spectrum.push_back({freq, std::norm(buf[k])});
    }
    if (est.spectrum.empty()) throw SignalError("estimate_hr: passband empty at this sampling rate");
    est.bpm = 60.0 * est.spectrum[spectral_peak_index(est.spectrum)].first;
    return est;
}

// ---------------------------------------------------------------------------
// metrics

inline double pearson_plain(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw SignalError("pearson: degenerate (constant) series");
    return sxy / std::sqrt(sxx * syy);
}

inline MetricReport metrics(const std::vector<double>& pred_hrs, const std::vector<double>& gt_hrs) {
    if (pred_hrs.size() != gt_hrs.size() || pred_hrs.empty())
        throw ArgumentError("metrics: need equal non-empty prediction/ground-truth lists");
    MetricReport r;
    r.n = static_cast<int>(pred_hrs.size());
    double mae = 0.0, mape = 0.0;
    for (int i = 0; i < r.n; ++i) {
        if (gt_hrs[i] == 0.0) throw ArgumentError("metrics: MAPE undefined for zero ground truth");
        mae += std::abs(gt_hrs[i] - pred_hrs[i]);
        mape += std::abs((gt_hrs[i] - pred_hrs[i]) / gt_hrs[i]);
    }
    r.mae = mae / r.n;
    r.mape = 100.0 * mape / r.n;
    if (r.n >= 2) r.rho = pearson_plain(pred_hrs, gt_hrs);
    return r;
}

struct BlandAltman {
    std::vector<std::pair<double, double>> rows;  // (mean, difference = pred - gt)
    double bias = 0.0;
    double limit_low = 0.0, limit_high = 0.0;  // bias -/+ 1.96 * population std
};

inline BlandAltman bland_altman(const std::vector<double>& pred_hrs, const std::vector<double>& gt_hrs) {
    if (pred_hrs.size() != gt_hrs.size() || pred_hrs.size() < 2)
        throw ArgumentError("bland_altman: need at least two paired samples");
    BlandAltman ba;
    for (size_t i = 0; i < pred_hrs.size(); ++i)
        ba.rows.push_back({(pred_hrs[i] + gt_hrs[i]) / 2.0, pred_hrs[i] - gt_hrs[i]});
    for (auto& [m, d] : ba.rows) ba.bias += d;
    ba.bias /= ba.rows.size();
    double var = 0.0;
    for (auto& [m, d] : ba.rows) var += (d - ba.bias) * (d - ba.bias);
    double sd = std::sqrt(var / ba.rows.size());
    ba.limit_low = ba.bias - 1.96 * sd;
    ba.limit_high = ba.bias + 1.96 * sd;
    return ba;
}

}  // namespace spikeattn
