#pragma once

// Input preprocessing (DiffNormalized) and the synthetic pulse-modulated
// video generator used in place of the public rPPG datasets. Clips are stored
// on disk as a directory with meta.json + frames.f32 (raw little-endian f32,
// row-major [3,T,H,W]) + wave.f32.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spikeattn/rng.hpp"
#include "spikeattn/tensor.hpp"

namespace spikeattn {

constexpr double kDiffEps = 1e-7;

struct VideoClip {
    Tensor frames;  // [3,T,H,W], values in [0,1]
    double fps = 30.0;

    int t() const { return frames.shape[1]; }
    int h() const { return frames.shape[2]; }
    int w() const { return frames.shape[3]; }
};

struct PulseWave {
    std::vector<double> samples;
    double fps = 30.0;
};

struct FaceBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1), pixel coords

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

struct SynthSpec {
    double hr_bpm = 72.0;
    FaceBox face_box;
    double noise_std = 0.0;
    double illumination_drift = 0.0;
    uint64_t seed = 0;
};

// d[t] = (x[t+1]-x[t]) / (x[t+1]+x[t]+eps), then standardized by the
// population std of all entries; the division is skipped when std < eps.
inline Tensor diff_normalize(const VideoClip& clip) {
    const int T = clip.t();
    if (T < 2) throw ArgumentError("diff_normalize: clip needs at least 2 frames");
    const int C = clip.frames.shape[0], H = clip.h(), W = clip.w();
    const int64_t hw = static_cast<int64_t>(H) * W;
    const auto& x = clip.frames.values();
    std::vector<double> d(static_cast<int64_t>(C) * (T - 1) * hw);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t + 1 < T; ++t)
            for (int64_t i = 0; i < hw; ++i) {
                double a = x[(static_cast<int64_t>(c) * T + t) * hw + i];
                double b = x[(static_cast<int64_t>(c) * T + t + 1) * hw + i];
                d[(static_cast<int64_t>(c) * (T - 1) + t) * hw + i] = (b - a) / (b + a + kDiffEps);
            }
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= d.size();
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    double std = std::sqrt(var / d.size());
    if (std >= kDiffEps)
        for (double& v : d) v /= std;
    return Tensor(Shape{C, T - 1, H, W}, std::move(d));
}

// First difference of the label wave divided by its population std (same
// std-skip rule as the frame path).
inline std::vector<double> diff_normalize_label(const PulseWave& wave) {
    if (wave.samples.size() < 2) throw ArgumentError("diff_normalize_label: wave needs at least 2 samples");
    std::vector<double> d(wave.samples.size() - 1);
    for (size_t t = 0; t + 1 < wave.samples.size(); ++t) d[t] = wave.samples[t + 1] - wave.samples[t];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= d.size();
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    double std = std::sqrt(var / d.size());
    if (std >= kDiffEps)
        for (double& v : d) v /= std;
    return d;
}

// Pulse signal used by the generator: fundamental plus a 0.3-weight second
// harmonic, amplitude 0.02.
inline double synth_signal(double hr_bpm, double t_frames, double fps) {
    const double f = hr_bpm / 60.0;
    const double phase = 2.0 * M_PI * f * t_frames / fps;
    return 0.02 * (std::sin(phase) + 0.3 * std::sin(2.0 * phase));
}

// Static pseudo-face texture, pixels inside face_box modulated by the pulse
// signal, Gaussian noise and slow illumination drift everywhere.
inline std::pair<VideoClip, PulseWave> synthesize(const SynthSpec& spec, int t, int h, int w, double fps) {
    if (spec.hr_bpm < 40.0 || spec.hr_bpm > 180.0)
        throw ArgumentError("synthesize: hr_bpm must be within [40,180], got " + std::to_string(spec.hr_bpm));
    if (spec.face_box.x0 < 0 || spec.face_box.y0 < 0 || spec.face_box.x1 > w || spec.face_box.y1 > h ||
        spec.face_box.width() <= 0 || spec.face_box.height() <= 0)
        throw ArgumentError("synthesize: face_box outside frame bounds");
    if (t < 2) throw ArgumentError("synthesize: need at least 2 frames");
    if (spec.noise_std < 0.0 || spec.illumination_drift < 0.0)
        throw ArgumentError("synthesize: noise/drift must be >= 0");

    Rng rng(Rng::mix(spec.seed, 0x5EED));
    // Base texture: smooth random blobs on a mid-gray background, slightly
    // brighter inside the face box so it looks face-ish in exports.
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<double> base(3 * hw);
    struct Blob {
        double cx, cy, sx, sy, amp;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < 6; ++i)
        blobs.push_back({rng.uniform(0, w), rng.uniform(0, h), rng.uniform(w / 8.0, w / 2.0),
                         rng.uniform(h / 8.0, h / 2.0), rng.uniform(-0.08, 0.08)});
    for (int c = 0; c < 3; ++c) {
        double tone = 0.45 + 0.05 * c;  // mild per-channel offset
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = tone;
                for (const auto& b : blobs) {
                    double dx = (x - b.cx) / b.sx, dy = (y - b.cy) / b.sy;
                    v += b.amp * std::exp(-0.5 * (dx * dx + dy * dy));
                }
                bool inside = x >= spec.face_box.x0 && x < spec.face_box.x1 && y >= spec.face_box.y0 &&
                              y < spec.face_box.y1;
                if (inside) v += 0.08;
                base[c * hw + y * w + x] = std::clamp(v, 0.05, 0.95);
            }
    }

    std::vector<double> frames(static_cast<int64_t>(3) * t * hw);
    std::vector<double> wave(t);
    // Slow drift: one low-frequency sinusoid with a seeded phase.
    double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double drift_freq = 0.05;  // Hz, well below the passband
    for (int ti = 0; ti < t; ++ti) {
        double s = synth_signal(spec.hr_bpm, ti, fps);
        wave[ti] = s;
        double drift = spec.illumination_drift * std::sin(2.0 * M_PI * drift_freq * ti / fps + drift_phase);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double v = base[c * hw + y * w + x] + drift;
                    bool inside = x >= spec.face_box.x0 && x < spec.face_box.x1 && y >= spec.face_box.y0 &&
                                  y < spec.face_box.y1;
                    if (inside) v += s;
                    if (spec.noise_std > 0.0) v += rng.normal(0.0, spec.noise_std);
                    frames[(static_cast<int64_t>(c) * t + ti) * hw + y * w + x] = std::clamp(v, 0.0, 1.0);
                }
    }
    VideoClip clip{Tensor(Shape{3, t, h, w}, std::move(frames)), fps};
    return {std::move(clip), PulseWave{std::move(wave), fps}};
}

// Aligned fixed-length segments.
inline std::vector<std::pair<VideoClip, PulseWave>> window(const VideoClip& clip, const PulseWave& wave,
                                                           int length, int stride) {
    const int T = clip.t();
    if (length > T) throw ArgumentError("window: length " + std::to_string(length) + " exceeds clip frames " +
                                        std::to_string(T));
    if (length < 1 || stride < 1) throw ArgumentError("window: length and stride must be >= 1");
    if (static_cast<int>(wave.samples.size()) != T)
        throw DimensionError("window: wave length does not match clip frames");
    const int C = clip.frames.shape[0], H = clip.h(), W = clip.w();
    const int64_t hw = static_cast<int64_t>(H) * W;
    const auto& x = clip.frames.values();
    std::vector<std::pair<VideoClip, PulseWave>> out;
    for (int start = 0; start + length <= T; start += stride) {
        std::vector<double> f(static_cast<int64_t>(C) * length * hw);
        for (int c = 0; c < C; ++c)
            std::copy(x.begin() + (static_cast<int64_t>(c) * T + start) * hw,
                      x.begin() + (static_cast<int64_t>(c) * T + start + length) * hw,
                      f.begin() + static_cast<int64_t>(c) * length * hw);
        std::vector<double> wv(wave.samples.begin() + start, wave.samples.begin() + start + length);
        out.push_back({VideoClip{Tensor(Shape{C, length, H, W}, std::move(f)), clip.fps},
                       PulseWave{std::move(wv), wave.fps}});
    }
    return out;
}

// Train/infer preprocessing: DiffNormalized then one zero frame appended so
// the network input keeps the clip's frame count (and the label its length).
inline Tensor prepare_frames(const VideoClip& clip) {
    Tensor d = diff_normalize(clip);
    const int C = d.shape[0], T = d.shape[1], H = d.shape[2], W = d.shape[3];
    const int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<double> out(static_cast<int64_t>(C) * (T + 1) * hw, 0.0);
    const auto& dv = d.values();
    for (int c = 0; c < C; ++c)
        std::copy(dv.begin() + static_cast<int64_t>(c) * T * hw, dv.begin() + static_cast<int64_t>(c + 1) * T * hw,
                  out.begin() + static_cast<int64_t>(c) * (T + 1) * hw);
    return Tensor(Shape{C, T + 1, H, W}, std::move(out));
}

inline std::vector<double> prepare_label(const PulseWave& wave) {
    std::vector<double> d = diff_normalize_label(wave);
    d.push_back(0.0);
    return d;
}

// ---------------------------------------------------------------------------
// clip directory I/O

namespace cliio {

inline void write_f32(const std::string& path, const std::vector<double>& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open for writing: " + path);
    for (double x : v) {
        float y = static_cast<float>(x);
        f.write(reinterpret_cast<const char*>(&y), sizeof(float));
    }
}

inline std::vector<double> read_f32(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw ArgumentError("cannot open: " + path);
    auto bytes = static_cast<size_t>(f.tellg());
    if (bytes % sizeof(float) != 0) throw ArgumentError("truncated f32 file: " + path);
    f.seekg(0);
    std::vector<float> raw(bytes / sizeof(float));
    f.read(reinterpret_cast<char*>(raw.data()), bytes);
    return std::vector<double>(raw.begin(), raw.end());
}

}  // namespace cliio

inline void save_clip(const std::string& dir, const VideoClip& clip, const PulseWave& wave, double hr_bpm,
                      const FaceBox* box = nullptr) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["fps"] = clip.fps;
    meta["shape"] = clip.frames.shape;
    meta["hr_bpm"] = hr_bpm;
    if (box) meta["face_box"] = {box->x0, box->y0, box->x1, box->y1};
    std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";
    cliio::write_f32(dir + "/frames.f32", clip.frames.values());
    cliio::write_f32(dir + "/wave.f32", wave.samples);
}

struct StoredClip {
    VideoClip clip;
    PulseWave wave;
    double hr_bpm = 0.0;
    FaceBox face_box;
    bool has_face_box = false;
};

inline StoredClip load_clip(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw ArgumentError("missing meta.json in " + dir);
    nlohmann::json meta = nlohmann::json::parse(mf);
    Shape shape = meta.at("shape").get<Shape>();
    if (shape.size() != 4 || shape[0] != 3) throw ArgumentError("bad clip shape in " + dir);
    StoredClip out;
    out.clip.fps = meta.at("fps").get<double>();
    out.hr_bpm = meta.value("hr_bpm", 0.0);
    if (meta.contains("face_box")) {
        auto fb = meta["face_box"];
        out.face_box = FaceBox{fb[0], fb[1], fb[2], fb[3]};
        out.has_face_box = true;
    }
    std::vector<double> frames = cliio::read_f32(dir + "/frames.f32");
    if (static_cast<int64_t>(frames.size()) != numel(shape)) throw ArgumentError("frames.f32 size mismatch in " + dir);
    out.clip.frames = Tensor(shape, std::move(frames));
    out.wave.samples = cliio::read_f32(dir + "/wave.f32");
    out.wave.fps = out.clip.fps;
    if (static_cast<int>(out.wave.samples.size()) != shape[1])
        throw ArgumentError("wave.f32 length does not match frame count in " + dir);
    return out;
}

}  // namespace spikeattn
