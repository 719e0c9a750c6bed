#pragma once

// Run configuration: one JSON document unioning the model, training, and
// synthesis settings plus paths. Unknown keys are rejected so config typos
// fail loudly; CLI flags override file values.

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "spikeattn/model.hpp"
#include "spikeattn/training.hpp"
#include "spikeattn/video.hpp"

namespace spikeattn {

struct SynthConfig {
    double hr_bpm = 72.0;
    double hr_min = 50.0, hr_max = 110.0;  // per-clip sampling range in dataset mode
    int count = 0;                         // 0 = single clip
    int frames = 80;
    int height = 32, width = 32;
    double fps = 30.0;
    double noise_std = 0.002;
    double illumination_drift = 0.005;
    uint64_t seed = 0;
    std::vector<int> face_box;  // empty = centered box covering ~60% of the frame

    FaceBox resolve_face_box() const {
        if (!face_box.empty()) {
            if (face_box.size() != 4) throw ConfigError("face_box must be [x0,y0,x1,y1]");
            return FaceBox{face_box[0], face_box[1], face_box[2], face_box[3]};
        }
        int mx = static_cast<int>(std::lround(width * 0.2)), my = static_cast<int>(std::lround(height * 0.2));
        return FaceBox{mx, my, width - mx, height - my};
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"hr_bpm", c.hr_bpm},
                       {"hr_min", c.hr_min},
                       {"hr_max", c.hr_max},
                       {"count", c.count},
                       {"frames", c.frames},
                       {"height", c.height},
                       {"width", c.width},
                       {"fps", c.fps},
                       {"noise_std", c.noise_std},
                       {"illumination_drift", c.illumination_drift},
                       {"seed", c.seed},
                       {"face_box", c.face_box}};
}

inline void synth_from_json_strict(const nlohmann::json& j, SynthConfig& c) {
    static const std::vector<std::string> known = {"hr_bpm", "hr_min", "hr_max", "count", "frames", "height",
                                                   "width", "fps", "noise_std", "illumination_drift", "seed",
                                                   "face_box"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown synth config key '" + it.key() + "'");
    c.hr_bpm = j.value("hr_bpm", c.hr_bpm);
    c.hr_min = j.value("hr_min", c.hr_min);
    c.hr_max = j.value("hr_max", c.hr_max);
    c.count = j.value("count", c.count);
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.fps = j.value("fps", c.fps);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.illumination_drift = j.value("illumination_drift", c.illumination_drift);
    c.seed = j.value("seed", c.seed);
    if (j.contains("face_box")) c.face_box = j["face_box"].get<std::vector<int>>();
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"seed", c.seed},
                       {"val_fraction", c.val_fraction},
                       {"alpha_time", c.loss.alpha_time},
                       {"beta0", c.loss.beta0},
                       {"eta", c.loss.eta},
                       {"label_sigma", c.loss.label_sigma}};
}

inline void train_from_json_strict(const nlohmann::json& j, TrainConfig& c) {
    static const std::vector<std::string> known = {"lr",   "weight_decay", "batch_size", "epochs",     "seed",
                                                   "val_fraction", "alpha_time", "beta0", "eta", "label_sigma"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown train config key '" + it.key() + "'");
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.loss.alpha_time = j.value("alpha_time", c.loss.alpha_time);
    c.loss.beta0 = j.value("beta0", c.loss.beta0);
    c.loss.eta = j.value("eta", c.loss.eta);
    c.loss.label_sigma = j.value("label_sigma", c.loss.label_sigma);
}

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"synth", c.synth}};
}

inline RunConfig load_run_config(const std::string& path) {
    RunConfig c;
    if (path.empty()) return c;
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    static const std::vector<std::string> known = {"model", "train", "synth"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown config section '" + it.key() + "'");
    if (j.contains("model")) from_json_strict(j["model"], c.model);
    if (j.contains("train")) train_from_json_strict(j["train"], c.train);
    if (j.contains("synth")) synth_from_json_strict(j["synth"], c.synth);
    return c;
}

// Worker cap from SPIKEATTN_THREADS; 0 or unset means single-threaded
// deterministic mode.
inline int worker_count() {
    const char* env = std::getenv("SPIKEATTN_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    if (n <= 1) return 1;
    return std::min(n, static_cast<int>(std::thread::hardware_concurrency() > 0
                                            ? std::thread::hardware_concurrency()
                                            : 1u));
}

// Runs fn(i) for i in [0, n) across the worker cap. Each index is independent
// so results are identical regardless of the worker count.
template <typename Fn>
inline void parallel_for(int n, Fn&& fn) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace spikeattn
