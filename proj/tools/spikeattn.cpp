// spikeattn command-line tool: synthetic data generation, training,
// inference, evaluation metrics, energy audits, spike-firing-rate attention
// maps, and ablation sweeps. Exit codes: 0 success, 1 usage error, 2 runtime
// error. Every run logs its resolved configuration.

#include <iostream>

#include "CLI11.hpp"

#include "spikeattn/attention.hpp"
#include "spikeattn/config.hpp"
#include "spikeattn/energy.hpp"
#include "spikeattn/metrics.hpp"
#include "spikeattn/model.hpp"
#include "spikeattn/training.hpp"
#include "spikeattn/video.hpp"

using namespace spikeattn;

namespace {

void log_config(const std::string& cmd, const nlohmann::json& j) {
    std::cout << "[" << cmd << "] resolved config: " << j.dump() << "\n";
}

std::vector<std::string> list_clip_dirs(const std::string& data_dir) {
    std::vector<std::string> dirs;
    if (std::filesystem::exists(data_dir + "/meta.json")) {
        dirs.push_back(data_dir);
        return dirs;
    }
    for (const auto& e : std::filesystem::directory_iterator(data_dir))
        if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ArgumentError("no clips found under " + data_dir);
    return dirs;
}

// Deterministic index partition: every k-th clip goes to validation.
bool is_val_index(size_t i, double val_fraction) {
    if (val_fraction <= 0.0) return false;
    int stride = std::max(2, static_cast<int>(std::lround(1.0 / val_fraction)));
    return (i % stride) == static_cast<size_t>(stride - 1);
}

StoredClip load_window(const std::string& dir, int frames) {
    StoredClip sc = load_clip(dir);
    if (sc.clip.t() < frames)
        throw ArgumentError("clip " + dir + " has " + std::to_string(sc.clip.t()) + " frames, need " +
                            std::to_string(frames));
    if (sc.clip.t() > frames) {
        auto windows = window(sc.clip, sc.wave, frames, frames);
        sc.clip = std::move(windows[0].first);
        sc.wave = std::move(windows[0].second);
    }
    return sc;
}

int run_synth(const RunConfig& cfg, const std::string& out_dir) {
    log_config("synth", nlohmann::json(cfg.synth));
    const SynthConfig& s = cfg.synth;
    FaceBox box = s.resolve_face_box();
    if (s.count <= 0) {
        SynthSpec spec{s.hr_bpm, box, s.noise_std, s.illumination_drift, s.seed};
        auto [clip, wave] = synthesize(spec, s.frames, s.height, s.width, s.fps);
        save_clip(out_dir, clip, wave, s.hr_bpm, &box);
        std::cout << "wrote clip (" << s.frames << " frames, hr " << s.hr_bpm << " bpm) to " << out_dir << "\n";
        return 0;
    }
    parallel_for(s.count, [&](int i) {
        Rng rng(Rng::mix(s.seed, 1000 + i));
        double hr = rng.uniform(s.hr_min, s.hr_max);
        SynthSpec spec{hr, box, s.noise_std, s.illumination_drift, Rng::mix(s.seed, 2000 + i)};
        auto [clip, wave] = synthesize(spec, s.frames, s.height, s.width, s.fps);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        save_clip(out_dir + "/" + name, clip, wave, hr, &box);
    });
    std::cout << "wrote " << s.count << " clips to " << out_dir << "\n";
    return 0;
}

int run_train(RunConfig cfg, const std::string& data_dir, const std::string& out_dir) {
    cfg.model.validate();
    cfg.train.validate();
    log_config("train", nlohmann::json(cfg));
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/config.json") << nlohmann::json(cfg).dump(2) << "\n";

    auto dirs = list_clip_dirs(data_dir);
    std::vector<TrainSample> train_set;
    std::vector<EvalSample> val_set;
    for (size_t i = 0; i < dirs.size(); ++i) {
        StoredClip sc = load_window(dirs[i], cfg.model.in_t);
        if (is_val_index(i, cfg.train.val_fraction)) val_set.push_back(make_eval_sample(sc));
        else train_set.push_back(make_train_sample(sc));
    }
    std::cout << "train clips: " << train_set.size() << ", validation clips: " << val_set.size() << "\n";

    Model model(cfg.model, cfg.train.seed);
    Model best;
    TrainResult result = train(model, train_set, val_set, cfg.train, &best);
    std::ofstream(out_dir + "/history.csv") << history_csv(result.history);
    model.save(out_dir + "/final");
    (val_set.empty() ? model : best).save(out_dir + "/best");
    for (const auto& row : result.history)
        std::cout << "epoch " << row.epoch << ": l_time=" << row.l_time << " l_ce=" << row.l_ce
                  << " l_ld=" << row.l_ld << " beta=" << row.beta << " val_mae=" << row.val_mae << "\n";
    if (!val_set.empty())
        std::cout << "best val MAE " << result.best_val_mae << " bpm at epoch " << result.best_epoch << "\n";
    return 0;
}

int run_infer(const std::string& ckpt, const std::string& clip_dir, std::string out_dir) {
    Model model = Model::load(ckpt);
    log_config("infer", nlohmann::json(model.cfg));
    StoredClip sc = load_window(clip_dir, model.cfg.in_t);
    Tensor x = prepare_frames(sc.clip);
    Tensor y = model.forward(x, model.bind_eval(), BnMode::Eval);
    if (out_dir.empty()) out_dir = clip_dir;
    std::filesystem::create_directories(out_dir);
    cliio::write_f32(out_dir + "/pred_wave.f32", y.values());
    PulseWave pred{y.values(), sc.clip.fps};
    double bpm = estimate_hr(bandpass(pred)).bpm;
    std::cout << "pred_wave.f32 written (" << y.numel() << " samples); estimated HR " << bpm << " bpm\n";
    if (sc.hr_bpm > 0.0) std::cout << "ground truth HR " << sc.hr_bpm << " bpm\n";
    return 0;
}

std::vector<std::string> wave_files(const std::string& path) {
    std::vector<std::string> files;
    if (std::filesystem::is_directory(path)) {
        for (const auto& e : std::filesystem::directory_iterator(path))
            if (e.path().extension() == ".f32") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    if (files.empty()) throw ArgumentError("no .f32 wave files at " + path);
    return files;
}

int run_metrics(const std::string& pred_path, const std::string& gt_path, double fps, const std::string& out_dir) {
    auto preds = wave_files(pred_path), gts = wave_files(gt_path);
    if (preds.size() != gts.size())
        throw ArgumentError("prediction/ground-truth counts differ (" + std::to_string(preds.size()) + " vs " +
                            std::to_string(gts.size()) + ")");
    log_config("metrics", {{"pred", pred_path}, {"gt", gt_path}, {"fps", fps}, {"pairs", preds.size()}});
    std::vector<double> pred_hrs, gt_hrs;
    for (size_t i = 0; i < preds.size(); ++i) {
        pred_hrs.push_back(estimate_hr(bandpass(PulseWave{cliio::read_f32(preds[i]), fps})).bpm);
        gt_hrs.push_back(estimate_hr(bandpass(PulseWave{cliio::read_f32(gts[i]), fps})).bpm);
    }
    MetricReport rep = metrics(pred_hrs, gt_hrs);
    nlohmann::json j{{"mae", rep.mae}, {"mape", rep.mape}, {"n", rep.n}};
    j["rho"] = rep.rho.has_value() ? nlohmann::json(*rep.rho) : nlohmann::json();
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/report.json") << j.dump(2) << "\n";
    std::cout << "report: " << j.dump() << "\n";
    if (rep.n >= 2) {
        BlandAltman ba = bland_altman(pred_hrs, gt_hrs);
        std::ofstream csv(out_dir + "/bland_altman.csv");
        csv << "mean,difference\n" << std::setprecision(10);
        for (auto& [m, d] : ba.rows) csv << m << "," << d << "\n";
        csv << "# bias," << ba.bias << "\n# limit_low," << ba.limit_low << "\n# limit_high," << ba.limit_high
            << "\n";
        std::cout << "bland-altman bias " << ba.bias << ", limits [" << ba.limit_low << ", " << ba.limit_high
                  << "]\n";
    }
    return 0;
}

int run_energy(double flops, double sops_count, const std::string& ckpt, const std::string& clip_dir,
               const std::string& mode, const std::string& out_dir) {
    if (ckpt.empty()) {
        // direct headline computation from given counts
        double e = energy(flops, sops_count);
        log_config("energy", {{"flops", flops}, {"sops", sops_count}});
        std::cout << "energy: " << std::fixed << std::setprecision(2) << e * 1e3 << " mJ (" << std::defaultfloat
                  << std::setprecision(6) << e << " J)\n";
        return 0;
    }
    Model model = Model::load(ckpt);
    log_config("energy", {{"ckpt", ckpt}, {"clip", clip_dir}, {"mode", mode}});
    StoredClip sc = load_window(clip_dir, model.cfg.in_t);
    CountMode cm = mode == "paper" ? CountMode::Paper : CountMode::Exact;
    EnergyReport rep = audit(model, prepare_frames(sc.clip), cm);
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/energy.csv") << energy_csv(rep);
    std::ofstream(out_dir + "/energy.json") << energy_json(rep).dump(2) << "\n";
    std::cout << "totals: " << energy_json(rep).dump() << "\n";
    return 0;
}

int run_attnmap(const std::string& ckpt, const std::string& clip_dir, int block, const std::string& source,
                double thr, const std::string& out_dir) {
    Model model = Model::load(ckpt);
    log_config("attnmap", {{"ckpt", ckpt}, {"clip", clip_dir}, {"block", block}, {"source", source}, {"thr", thr}});
    if (block < 0 || block >= model.cfg.n_blocks) throw ArgumentError("block index out of range");
    StoredClip sc = load_window(clip_dir, model.cfg.in_t);
    Diagnostics diag;
    bool has_stats = true;
    for (const auto& s : model.stats())
        if (s.stats.batches == 0) has_stats = false;
    model.forward(prepare_frames(sc.clip), model.bind_eval(), has_stats ? BnMode::Eval : BnMode::Train, &diag);
    const BlockDiag& bd = diag.blocks.at(block);
    MapSource src = source == "vhat" ? MapSource::VHat : MapSource::V;
    SfrMap map = sfr_map(src == MapSource::V ? bd.v_tokens : bd.vhat_tokens, diag.origin, src, block);
    export_map(map, out_dir);
    auto tmap = threshold_map(map, thr);
    int kept = 0;
    for (int v : tmap) kept += v;
    std::ofstream th(out_dir + "/threshold.csv");
    for (int t = 0; t < map.origin.t; ++t) {
        for (int c = 0; c < map.origin.h * map.origin.w; ++c)
            th << (c ? "," : "") << tmap[t * map.origin.h * map.origin.w + c];
        th << "\n";
    }
    std::cout << "map " << map.origin.t << "x" << map.origin.h * map.origin.w << " written to " << out_dir << "; "
              << kept << "/" << tmap.size() << " cells above " << thr << "\n";
    if (sc.has_face_box && model.cfg.grid_h() * model.cfg.grid_w() > 1) {
        // scale the pixel box onto the token grid
        auto to_grid = [](int v, int in, int out) {
            return std::clamp(static_cast<int>(std::lround(static_cast<double>(v) * out / in)), 0, out);
        };
        int gx0 = to_grid(sc.face_box.x0, sc.clip.w(), map.origin.w);
        int gx1 = std::max(gx0 + 1, to_grid(sc.face_box.x1, sc.clip.w(), map.origin.w));
        int gy0 = to_grid(sc.face_box.y0, sc.clip.h(), map.origin.h);
        int gy1 = std::max(gy0 + 1, to_grid(sc.face_box.y1, sc.clip.h(), map.origin.h));
        if (gx1 <= map.origin.w && gy1 <= map.origin.h &&
            (gx1 - gx0) * (gy1 - gy0) < map.origin.w * map.origin.h) {
            RegionStats rs = region_stats(map, gx0, gy0, gx1, gy1);
            std::cout << "region stats: inside " << rs.inside_mean << ", outside " << rs.outside_mean
                      << ", ratio " << rs.ratio << "\n";
        }
    }
    try {
        double rho = peak_alignment(map, sc.wave);
        std::cout << "peak alignment rho " << rho << "\n";
    } catch (const SignalError&) {
        std::cout << "peak alignment undefined (constant series)\n";
    }
    return 0;
}

int run_sweep(RunConfig cfg, const std::string& axis, const std::vector<std::string>& values,
              const std::string& data_dir, const std::string& out_dir) {
    log_config("sweep", {{"axis", axis}, {"values", values}});
    for (const std::string& v : values) {
        RunConfig point = cfg;
        if (axis == "t_s") point.model.t_s = std::stoi(v);
        else if (axis == "n_blocks") point.model.n_blocks = std::stoi(v);
        else if (axis == "parallel") point.model.parallel = (v == "true" || v == "1");
        else if (axis == "projection") {
            // value format: q-k-v with entries tdc|conv3d|none
            auto dash1 = v.find('-'), dash2 = v.rfind('-');
            if (dash1 == std::string::npos || dash2 == dash1)
                throw ArgumentError("projection value must look like tdc-conv3d-none");
            point.model.q_proj = proj_from_name(v.substr(0, dash1));
            point.model.k_proj = proj_from_name(v.substr(dash1 + 1, dash2 - dash1 - 1));
            point.model.v_proj = proj_from_name(v.substr(dash2 + 1));
        } else if (axis == "components") {
            // value format: pe-transformer-head with entries ann|snn (transformer is always snn)
            auto dash1 = v.find('-'), dash2 = v.rfind('-');
            if (dash1 == std::string::npos || dash2 == dash1)
                throw ArgumentError("components value must look like ann-snn-ann");
            point.model.pe_kind = v.substr(0, dash1) == "snn" ? Component::Snn : Component::Ann;
            point.model.head_kind = v.substr(dash2 + 1) == "snn" ? Component::Snn : Component::Ann;
        } else {
            throw ArgumentError("unknown sweep axis '" + axis +
                                "' (expected t_s|n_blocks|parallel|projection|components)");
        }
        std::string point_dir = out_dir + "/" + axis + "=" + v;
        std::cout << "=== sweep point " << axis << "=" << v << " -> " << point_dir << "\n";
        run_train(point, data_dir, point_dir);
        // energy audit of the best checkpoint on the first clip
        auto dirs = list_clip_dirs(data_dir);
        run_energy(0, 0, point_dir + "/best", dirs[0], "exact", point_dir);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spiking hybrid transformer for camera-based pulse-wave estimation"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path, data_dir, out_dir, ckpt, clip_dir;

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate synthetic pulse-modulated clips");
    synth->add_option("--config", config_path, "JSON run config (flags override)");
    synth->add_option("--out", out_dir, "output clip directory")->required();
    double s_hr = -1, s_noise = -1, s_drift = -1, s_fps = -1;
    double s_hr_min = -1, s_hr_max = -1;
    int s_frames = -1, s_size = -1, s_height = -1, s_width = -1, s_count = -1;
    int64_t s_seed = -1;
    std::vector<int> s_face;
    synth->add_option("--hr", s_hr, "heart rate in bpm (single-clip mode)");
    synth->add_option("--frames", s_frames, "frames per clip");
    synth->add_option("--size", s_size, "square frame size (sets height and width)");
    synth->add_option("--height", s_height, "frame height");
    synth->add_option("--width", s_width, "frame width");
    synth->add_option("--fps", s_fps, "frames per second");
    synth->add_option("--noise", s_noise, "Gaussian pixel noise std");
    synth->add_option("--drift", s_drift, "illumination drift amplitude");
    synth->add_option("--seed", s_seed, "RNG seed");
    synth->add_option("--count", s_count, "number of clips (dataset mode; 0 = single clip)");
    synth->add_option("--hr-min", s_hr_min, "dataset mode: low end of the HR range");
    synth->add_option("--hr-max", s_hr_max, "dataset mode: high end of the HR range");
    synth->add_option("--face", s_face, "face box x0 y0 x1 y1 in pixels")->expected(4);

    // train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model on stored clips");
    tr->add_option("--config", config_path, "JSON run config (flags override)");
    tr->add_option("--data", data_dir, "clip dataset directory")->required();
    tr->add_option("--out", out_dir, "output directory (history.csv, best/, final/)")->required();
    int t_epochs = -1, t_batch = -1, t_blocks = -1, t_ts = -1, t_dmodel = -1, t_heads = -1;
    int t_in_t = -1, t_in_h = -1, t_in_w = -1;
    double t_lr = -1, t_wd = -1, t_mlp = -1, t_theta = -1;
    double t_alpha_time = -1, t_beta0 = -1, t_eta = -1, t_sigma = -1, t_valfrac = -1;
    int64_t t_seed = -1;
    std::string t_q, t_k, t_v, t_pe, t_head;
    int t_parallel = -1;
    tr->add_option("--epochs", t_epochs, "training epochs");
    tr->add_option("--lr", t_lr, "learning rate");
    tr->add_option("--weight-decay", t_wd, "decoupled weight decay");
    tr->add_option("--batch", t_batch, "batch size");
    tr->add_option("--seed", t_seed, "RNG seed");
    tr->add_option("--val-fraction", t_valfrac, "validation split fraction");
    tr->add_option("--alpha-time", t_alpha_time, "time-loss weight");
    tr->add_option("--beta0", t_beta0, "initial frequency-loss weight");
    tr->add_option("--eta", t_eta, "frequency-loss schedule base");
    tr->add_option("--label-sigma", t_sigma, "label distribution sigma in bpm");
    tr->add_option("--d-model", t_dmodel, "channel width D");
    tr->add_option("--blocks", t_blocks, "transformer block count L");
    tr->add_option("--t-s", t_ts, "spike timesteps T_s");
    tr->add_option("--heads", t_heads, "attention heads");
    tr->add_option("--mlp-ratio", t_mlp, "MLP expansion ratio");
    tr->add_option("--theta", t_theta, "TDC temporal-difference weight");
    tr->add_option("--q-proj", t_q, "query projection: tdc|conv3d|none");
    tr->add_option("--k-proj", t_k, "key projection: tdc|conv3d|none");
    tr->add_option("--v-proj", t_v, "value projection: conv3d|none");
    tr->add_option("--parallel", t_parallel, "1 = parallel sub-blocks, 0 = sequential");
    tr->add_option("--pe-kind", t_pe, "patch embedding: ann|snn");
    tr->add_option("--head-kind", t_head, "predictor head: ann|snn");
    tr->add_option("--in-t", t_in_t, "input frames T");
    tr->add_option("--in-h", t_in_h, "input height");
    tr->add_option("--in-w", t_in_w, "input width");

    // infer ------------------------------------------------------------
    auto* inf = app.add_subcommand("infer", "run inference on a stored clip");
    inf->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    inf->add_option("--clip", clip_dir, "clip directory")->required();
    inf->add_option("--out", out_dir, "output directory (default: the clip directory)");

    // metrics ----------------------------------------------------------
    auto* met = app.add_subcommand("metrics", "HR metrics between predicted and ground-truth waves");
    std::string m_pred, m_gt;
    double m_fps = 30.0;
    met->add_option("--pred", m_pred, "predicted wave file or directory of .f32")->required();
    met->add_option("--gt", m_gt, "ground-truth wave file or directory of .f32")->required();
    met->add_option("--fps", m_fps, "wave sampling rate");
    met->add_option("--out", out_dir, "output directory")->required();

    // energy -----------------------------------------------------------
    auto* en = app.add_subcommand("energy", "energy model: direct counts or a full-model audit");
    double e_flops = -1, e_sops = -1;
    std::string e_mode = "exact";
    en->add_option("--flops", e_flops, "MAC count (direct mode)");
    en->add_option("--sops", e_sops, "AC count (direct mode)");
    en->add_option("--ckpt", ckpt, "checkpoint directory (audit mode)");
    en->add_option("--clip", clip_dir, "clip directory (audit mode)");
    en->add_option("--mode", e_mode, "conv counting: exact|paper")->check(CLI::IsMember({"exact", "paper"}));
    en->add_option("--out", out_dir, "output directory (audit mode)");

    // attnmap ----------------------------------------------------------
    auto* at = app.add_subcommand("attnmap", "spike-firing-rate attention maps");
    int a_block = 0;
    std::string a_source = "vhat";
    double a_thr = 0.1;
    at->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    at->add_option("--clip", clip_dir, "clip directory")->required();
    at->add_option("--block", a_block, "transformer block index");
    at->add_option("--source", a_source, "v|vhat")->check(CLI::IsMember({"v", "vhat"}));
    at->add_option("--thr", a_thr, "threshold for the truncation map");
    at->add_option("--out", out_dir, "output directory")->required();

    // sweep ------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "ablation sweep over one config axis");
    std::string w_axis;
    std::vector<std::string> w_values;
    sw->add_option("--config", config_path, "JSON run config");
    sw->add_option("--axis", w_axis, "t_s|n_blocks|parallel|projection|components")->required();
    sw->add_option("--values", w_values, "comma-separated values")->required()->delimiter(',');
    sw->add_option("--data", data_dir, "clip dataset directory")->required();
    sw->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        cfg = load_run_config(config_path);
        if (synth->parsed()) {
            if (s_hr >= 0) cfg.synth.hr_bpm = s_hr;
            if (s_frames >= 0) cfg.synth.frames = s_frames;
            if (s_size >= 0) cfg.synth.height = cfg.synth.width = s_size;
            if (s_height >= 0) cfg.synth.height = s_height;
            if (s_width >= 0) cfg.synth.width = s_width;
            if (s_fps >= 0) cfg.synth.fps = s_fps;
            if (s_noise >= 0) cfg.synth.noise_std = s_noise;
            if (s_drift >= 0) cfg.synth.illumination_drift = s_drift;
            if (s_seed >= 0) cfg.synth.seed = static_cast<uint64_t>(s_seed);
            if (s_count >= 0) cfg.synth.count = s_count;
            if (s_hr_min >= 0) cfg.synth.hr_min = s_hr_min;
            if (s_hr_max >= 0) cfg.synth.hr_max = s_hr_max;
            if (!s_face.empty()) cfg.synth.face_box = s_face;
            return run_synth(cfg, out_dir);
        }
        if (tr->parsed() || sw->parsed()) {
            if (t_epochs >= 0) cfg.train.epochs = t_epochs;
            if (t_lr >= 0) cfg.train.lr = t_lr;
            if (t_wd >= 0) cfg.train.weight_decay = t_wd;
            if (t_batch >= 0) cfg.train.batch_size = t_batch;
            if (t_seed >= 0) cfg.train.seed = static_cast<uint64_t>(t_seed);
            if (t_valfrac >= 0) cfg.train.val_fraction = t_valfrac;
            if (t_alpha_time >= 0) cfg.train.loss.alpha_time = t_alpha_time;
            if (t_beta0 >= 0) cfg.train.loss.beta0 = t_beta0;
            if (t_eta >= 0) cfg.train.loss.eta = t_eta;
            if (t_sigma >= 0) cfg.train.loss.label_sigma = t_sigma;
            if (t_dmodel >= 0) cfg.model.d_model = t_dmodel;
            if (t_blocks >= 0) cfg.model.n_blocks = t_blocks;
            if (t_ts >= 0) cfg.model.t_s = t_ts;
            if (t_heads >= 0) cfg.model.n_heads = t_heads;
            if (t_mlp >= 0) cfg.model.mlp_ratio = t_mlp;
            if (t_theta >= 0) cfg.model.tdc_theta = t_theta;
            if (!t_q.empty()) cfg.model.q_proj = proj_from_name(t_q);
            if (!t_k.empty()) cfg.model.k_proj = proj_from_name(t_k);
            if (!t_v.empty()) cfg.model.v_proj = proj_from_name(t_v);
            if (t_parallel >= 0) cfg.model.parallel = t_parallel != 0;
            if (!t_pe.empty()) cfg.model.pe_kind = t_pe == "snn" ? Component::Snn : Component::Ann;
            if (!t_head.empty()) cfg.model.head_kind = t_head == "snn" ? Component::Snn : Component::Ann;
            if (t_in_t >= 0) cfg.model.in_t = t_in_t;
            if (t_in_h >= 0) cfg.model.in_h = t_in_h;
            if (t_in_w >= 0) cfg.model.in_w = t_in_w;
            if (sw->parsed()) return run_sweep(cfg, w_axis, w_values, data_dir, out_dir);
            return run_train(cfg, data_dir, out_dir);
        }
        if (inf->parsed()) return run_infer(ckpt, clip_dir, out_dir);
        if (met->parsed()) return run_metrics(m_pred, m_gt, m_fps, out_dir);
        if (en->parsed()) {
            if (ckpt.empty() && (e_flops < 0 || e_sops < 0))
                throw ArgumentError("energy needs either --flops and --sops or --ckpt and --clip");
            return run_energy(std::max(0.0, e_flops), std::max(0.0, e_sops), ckpt, clip_dir, e_mode, out_dir);
        }
        if (at->parsed()) return run_attnmap(ckpt, clip_dir, a_block, a_source, a_thr, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
