#pragma once

// The full Spiking-PhysFormer network: ANN patch-embedding stem, direct
// encoding, L parallel spike-driven transformer blocks (multi-head S3A + MLP),
// spike decoding by temporal averaging, and the ANN predictor head. Checkpoint
// format: model.json manifest (config + named tensor shapes, ordered) +
// weights.bin (concatenated little-endian f32 blobs in manifest order).

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include <nlohmann/json.hpp>

#include "spikeattn/rng.hpp"
#include "spikeattn/spiking.hpp"
#include "spikeattn/tensor.hpp"

namespace spikeattn {

enum class Proj { TDC, Conv3D, None };
enum class Component { Ann, Snn };

inline std::string proj_name(Proj p) {
    switch (p) {
        case Proj::TDC: return "tdc";
        case Proj::Conv3D: return "conv3d";
        default: return "none";
    }
}
inline Proj proj_from_name(const std::string& s) {
    if (s == "tdc") return Proj::TDC;
    if (s == "conv3d") return Proj::Conv3D;
    if (s == "none") return Proj::None;
    throw ConfigError("unknown projection kind '" + s + "'");
}

struct ModelConfig {
    int d_model = 96;
    int n_blocks = 4;
    int t_s = 4;
    int n_heads = 4;
    double mlp_ratio = 3.0;
    double tdc_theta = 0.7;
    Proj q_proj = Proj::TDC;
    Proj k_proj = Proj::Conv3D;
    Proj v_proj = Proj::None;
    bool parallel = true;
    // parallel gains (Eq 16) and sequential gains (Eqs 14-15), all default 1
    double alpha_comb = 1.0, beta_ff = 1.0, beta_sa = 1.0;
    double alpha_ff = 1.0, alpha_sa = 1.0;
    int in_t = 160, in_h = 128, in_w = 128;
    LifParams lif;
    Component pe_kind = Component::Ann;
    Component head_kind = Component::Ann;
    bool smooth_spikes = false;  // gradient-check mode: Theta -> smooth primitive

    int mlp_hidden() const { return std::max(1, static_cast<int>(std::lround(mlp_ratio * d_model))); }

    void validate() const {
        if (d_model < 4 || d_model % 4 != 0) throw ConfigError("d_model must be a positive multiple of 4");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (d_model % 2 != 0) throw ConfigError("d_model must be even for the predictor head");
        if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
        if (t_s < 1) throw ConfigError("t_s must be >= 1");
        if (v_proj == Proj::TDC)
            throw ConfigError("unsupported-variant: TDC for the V projection is not an ablation row");
        if (in_t % 4 != 0) throw GeometryError("input T=" + std::to_string(in_t) + " must be divisible by 4");
        auto spatial_ok = [](int v) { return v >= 8 && (v % 32 == 0 || v <= 32); };
        if (!spatial_ok(in_h)) throw GeometryError("input H=" + std::to_string(in_h) + " must be >=8 and divisible by 32 (or <=32)");
        if (!spatial_ok(in_w)) throw GeometryError("input W=" + std::to_string(in_w) + " must be >=8 and divisible by 32 (or <=32)");
        lif.validate();
    }

    // spatial extent after the stem: five /2 stages (conv1, three pools with
    // clamped windows for small inputs, conv4) -> H/32 for multiples of 32
    static int spatial_out(int v) {
        int x = (v + 4 - 5) / 2 + 1;      // conv1 k5 pad2 stride2
        x = x >= 2 ? x / 2 : x;           // pool1
        x = x >= 2 ? x / 2 : x;           // pool2
        x = x >= 2 ? x / 2 : x;           // pool3
        x = (x + 2 - 3) / 2 + 1;          // conv4 k3 pad1 stride2
        return std::max(1, x);
    }
    int grid_t() const { return in_t / 4; }
    int grid_h() const { return spatial_out(in_h); }
    int grid_w() const { return spatial_out(in_w); }
    int n_tokens() const { return grid_t() * grid_h() * grid_w(); }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model},
                       {"n_blocks", c.n_blocks},
                       {"t_s", c.t_s},
                       {"n_heads", c.n_heads},
                       {"mlp_ratio", c.mlp_ratio},
                       {"tdc_theta", c.tdc_theta},
                       {"q_proj", proj_name(c.q_proj)},
                       {"k_proj", proj_name(c.k_proj)},
                       {"v_proj", proj_name(c.v_proj)},
                       {"parallel", c.parallel},
                       {"alpha_comb", c.alpha_comb},
                       {"beta_ff", c.beta_ff},
                       {"beta_sa", c.beta_sa},
                       {"alpha_ff", c.alpha_ff},
                       {"alpha_sa", c.alpha_sa},
                       {"in_t", c.in_t},
                       {"in_h", c.in_h},
                       {"in_w", c.in_w},
                       {"tau", c.lif.tau},
                       {"v_th", c.lif.v_th},
                       {"v_reset", c.lif.v_reset},
                       {"surrogate_alpha", c.lif.alpha},
                       {"pe_kind", c.pe_kind == Component::Ann ? "ann" : "snn"},
                       {"head_kind", c.head_kind == Component::Ann ? "ann" : "snn"},
                       {"smooth_spikes", c.smooth_spikes}};
}

inline void from_json_strict(const nlohmann::json& j, ModelConfig& c) {
    static const std::vector<std::string> known = {
        "d_model", "n_blocks", "t_s", "n_heads", "mlp_ratio", "tdc_theta", "q_proj", "k_proj", "v_proj",
        "parallel", "alpha_comb", "beta_ff", "beta_sa", "alpha_ff", "alpha_sa", "in_t", "in_h", "in_w",
        "tau", "v_th", "v_reset", "surrogate_alpha", "pe_kind", "head_kind", "smooth_spikes"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown model config key '" + it.key() + "'");
    c.d_model = j.value("d_model", c.d_model);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.t_s = j.value("t_s", c.t_s);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.tdc_theta = j.value("tdc_theta", c.tdc_theta);
    if (j.contains("q_proj")) c.q_proj = proj_from_name(j["q_proj"]);
    if (j.contains("k_proj")) c.k_proj = proj_from_name(j["k_proj"]);
    if (j.contains("v_proj")) c.v_proj = proj_from_name(j["v_proj"]);
    c.parallel = j.value("parallel", c.parallel);
    c.alpha_comb = j.value("alpha_comb", c.alpha_comb);
    c.beta_ff = j.value("beta_ff", c.beta_ff);
    c.beta_sa = j.value("beta_sa", c.beta_sa);
    c.alpha_ff = j.value("alpha_ff", c.alpha_ff);
    c.alpha_sa = j.value("alpha_sa", c.alpha_sa);
    c.in_t = j.value("in_t", c.in_t);
    c.in_h = j.value("in_h", c.in_h);
    c.in_w = j.value("in_w", c.in_w);
    c.lif.tau = j.value("tau", c.lif.tau);
    c.lif.v_th = j.value("v_th", c.lif.v_th);
    c.lif.v_reset = j.value("v_reset", c.lif.v_reset);
    c.lif.alpha = j.value("surrogate_alpha", c.lif.alpha);
    if (j.contains("pe_kind")) c.pe_kind = j["pe_kind"] == "snn" ? Component::Snn : Component::Ann;
    if (j.contains("head_kind")) c.head_kind = j["head_kind"] == "snn" ? Component::Snn : Component::Ann;
    c.smooth_spikes = j.value("smooth_spikes", c.smooth_spikes);
}

// ---------------------------------------------------------------------------
// free building blocks

// Temporal difference convolution (3x3x3 kernel, padding 1):
// TDC(x) = conv3d(x, w) - theta * conv1x1(x, sum of w over the two adjacent
// temporal slices). The second term is Eq 17's -x(p0) * sum_{R'} w(pn).
inline Tensor tdc(const Tensor& x, const Tensor& w, double theta) {
    if (w.shape.size() != 5 || w.shape[2] != 3 || w.shape[3] != 3 || w.shape[4] != 3)
        throw ArgumentError("tdc: kernel must be 3x3x3, got " + shape_str(w.shape));
    Tensor base = conv3d(x, w, {1, 1, 1}, {1, 1, 1});
    if (theta == 0.0) return base;
    Tensor diff = conv3d(x, kernel_temporal_sum(w), {1, 1, 1}, {0, 0, 0});
    return sub(base, scale(diff, theta));
}

struct TokenOrigin {
    int t = 0, h = 0, w = 0;
    int tokens() const { return t * h * w; }
};

// [T_s, D, T', H', W'] -> [T_s, N, D]
inline Tensor vid2seq(const Tensor& x) {
    if (x.shape.size() != 5) throw DimensionError("vid2seq: expected rank-5 input, got " + shape_str(x.shape));
    const int ts = x.shape[0], d = x.shape[1];
    const int n = x.shape[2] * x.shape[3] * x.shape[4];
    return transpose_12(reshape(x, Shape{ts, d, n}));
}

// [T_s, N, D] -> [T_s, D, T', H', W']
inline Tensor seq2vid(const Tensor& x, const TokenOrigin& o) {
    if (x.shape.size() != 3) throw DimensionError("seq2vid: expected rank-3 input, got " + shape_str(x.shape));
    if (x.shape[1] != o.tokens())
        throw DimensionError("seq2vid: token count " + std::to_string(x.shape[1]) + " does not match origin " +
                             std::to_string(o.tokens()));
    return reshape(transpose_12(x), Shape{x.shape[0], x.shape[2], o.t, o.h, o.w});
}

// Single-head S3A core (Eq 21): m = Q (*) K, c = column sum over tokens,
// g = SN(c) with membrane carried across the spike timesteps, output = V
// masked per-channel by g.
inline std::pair<SpikeTensor, SpikeTensor> s3a_head(const SpikeTensor& q, const SpikeTensor& k,
                                                    const SpikeTensor& v, const LifParams& p,
                                                    SpikeMode mode = SpikeMode::Binary) {
    if (!same_shape(q.values.shape, k.values.shape) || !same_shape(q.values.shape, v.values.shape))
        throw DimensionError("s3a_head: Q/K/V shapes differ");
    if (q.values.shape.size() != 3) throw DimensionError("s3a_head: expected [T_s,N,d] inputs");
    Tensor m = mul(q.values, k.values);
    Tensor col = sum_axis(m, 1);                       // [T_s, d]
    SpikeTensor gate = lif_sequence(col, p, mode);     // stateful across T_s
    Tensor out = mul_gate(v.values, gate.values);
    return {SpikeTensor(out), gate};
}

// ---------------------------------------------------------------------------
// layer trace for the energy audit

struct LayerTrace {
    std::string name;
    bool snn = false;
    // For ANN rows, counts cover the whole forward; for SNN rows they are the
    // per-timestep MAC-equivalent (Eq 31 multiplies by fr * T_s).
    int64_t flops_exact = 0;
    int64_t flops_paper = 0;
    double fire_rate = 0.0;  // input fire rate, SNN rows only
};

struct BlockDiag {
    double fr_input = 0.0, fr_q = 0.0, fr_k = 0.0, fr_v = 0.0, fr_vhat = 0.0;
    double fr_mlp_hidden = 0.0, fr_attn_out = 0.0;
    Tensor v_tokens, vhat_tokens;  // [T_s, N, D] spike values
};

struct Diagnostics {
    TokenOrigin origin;
    std::vector<BlockDiag> blocks;
    std::vector<LayerTrace> trace;
    std::vector<double> stem_fire_rates;  // SNN-PE variant only
};

// conv cost helpers (counts, not flops_conv from energy.hpp, to avoid a
// circular include; energy.hpp re-exposes the public op)
namespace cost {
inline int64_t conv_exact(int kt, int kh, int kw, int t, int h, int w, int ci, int co) {
    return static_cast<int64_t>(kt) * kh * kw * t * h * w * ci * co;
}
inline int64_t conv_paper(int kh, int kw, int t, int h, int w, int ci, int co) {
    return static_cast<int64_t>(kh) * kw * t * h * w * ci * co;
}
}  // namespace cost

// ---------------------------------------------------------------------------
// the model

struct Param {
    std::string name;
    Tensor value;
};

struct NamedStats {
    std::string name;
    BnStats stats;
};

class Model {
public:
    ModelConfig cfg;

    Model() = default;
    explicit Model(const ModelConfig& c, uint64_t seed = 0) : cfg(c) {
        cfg.validate();
        build(seed);
    }

    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<NamedStats>& stats() const { return stats_; }
    std::vector<NamedStats>& stats() { return stats_; }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    // Bind parameters onto a tape (training) or pass through (inference).
    std::vector<Tensor> bind(Tape& tape) const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(tape.leaf(p.value));
        return out;
    }
    std::vector<Tensor> bind_eval() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    int param_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
        return it->second;
    }
    BnStats& stats_of(const std::string& name) {
        auto it = stats_index_.find(name);
        if (it == stats_index_.end()) throw ArgumentError("unknown stats '" + name + "'");
        return stats_[it->second].stats;
    }

    // ---- forward -----------------------------------------------------------

    struct BlockResult {
        Tensor u_out;
        SpikeTensor s_in;      // SN(U_in), shared by both branches in parallel mode
        Tensor mlp_branch;     // MLP(SN(U_in)) (parallel) or MLP(SN(U_hat)) (sequential)
        Tensor sa_branch;      // SA (MHS3A) output
    };

    Tensor forward(const Tensor& clip_pre, const std::vector<Tensor>& bound, BnMode mode,
                   Diagnostics* diag = nullptr) {
        check_geometry(clip_pre);
        SpikeMode smode = cfg.smooth_spikes ? SpikeMode::Smooth : SpikeMode::Binary;
        if (diag) diag->origin = TokenOrigin{cfg.grid_t(), cfg.grid_h(), cfg.grid_w()};

        Tensor u = cfg.pe_kind == Component::Ann ? direct_encode(patch_embed(clip_pre, bound, mode, diag), cfg.t_s)
                                                 : patch_embed_snn(clip_pre, bound, mode, smode, diag);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            BlockResult r = run_block(u, bound, b, mode, smode, diag);
            u = r.u_out;
        }
        Tensor u_mean = scale(sum_axis(u, 0), 1.0 / cfg.t_s);  // spike decoding, Eq 10
        return cfg.head_kind == Component::Ann ? predictor_head(u_mean, bound, mode, diag)
                                               : predictor_head_snn(u, bound, mode, smode, diag);
    }

    // PE stem: four 3D convolutions + three max-pools, (T,H,W) -> (T/4, H/32, W/32)
    // with pool windows clamped for sub-32 spatial inputs.
    Tensor patch_embed(const Tensor& x, const std::vector<Tensor>& bound, BnMode mode, Diagnostics* diag) {
        const int d = cfg.d_model;
        Tensor h = x;
        h = stem_stage(h, bound, "stem.conv1", {1, 5, 5}, {1, 2, 2}, {0, 2, 2}, 3, d / 4, mode, diag, true);
        h = clamped_pool(h, {1, 2, 2});
        h = stem_stage(h, bound, "stem.conv2", {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, d / 4, d / 2, mode, diag, true);
        h = clamped_pool(h, {2, 2, 2});
        h = stem_stage(h, bound, "stem.conv3", {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, d / 2, d, mode, diag, true);
        h = clamped_pool(h, {2, 2, 2});
        h = stem_stage(h, bound, "stem.conv4", {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, d, d, mode, diag, true);
        return h;
    }

    BlockResult run_block(const Tensor& u, const std::vector<Tensor>& bound, int b, BnMode mode, SpikeMode smode,
                          Diagnostics* diag) {
        BlockDiag bd;
        BlockResult r;
        if (cfg.parallel) {
            r.s_in = lif_sequence(u, cfg.lif, smode);
            bd.fr_input = r.s_in.fire_rate;
            r.sa_branch = sa_branch(r.s_in, bound, b, mode, smode, &bd, diag);
            r.mlp_branch = mlp_branch(r.s_in, bound, b, mode, smode, &bd, diag);
            r.u_out = combine_parallel(u, r.mlp_branch, r.sa_branch);
        } else {
            // Eqs 14-15: U_hat = a_SA*U + b_SA*SA(SN(U)); U_out = a_FF*U_hat + b_FF*MLP(SN(U_hat))
            r.s_in = lif_sequence(u, cfg.lif, smode);
            bd.fr_input = r.s_in.fire_rate;
            r.sa_branch = sa_branch(r.s_in, bound, b, mode, smode, &bd, diag);
            Tensor u_hat = lincomb(cfg.alpha_sa, u, cfg.beta_sa, r.sa_branch);
            SpikeTensor s2 = lif_sequence(u_hat, cfg.lif, smode);
            r.mlp_branch = mlp_branch(s2, bound, b, mode, smode, &bd, diag);
            r.u_out = lincomb(cfg.alpha_ff, u_hat, cfg.beta_ff, r.mlp_branch);
        }
        if (diag) diag->blocks.push_back(bd);
        return r;
    }

    // Exposed so the acceptance suite can recombine branches bit-exactly.
    Tensor combine_parallel(const Tensor& u_in, const Tensor& mlp, const Tensor& sa) const {
        return lincomb3(cfg.alpha_comb, u_in, cfg.beta_ff, mlp, cfg.beta_sa, sa);
    }

    // Q/K/V projections (Eqs 18-20). TDC only for Q by default; K is a
    // pointwise Conv3D; V has no projection (BN + SN only).
    struct Qkv {
        SpikeTensor q, k, v;
    };
    Qkv project_qkv(const SpikeTensor& s, const std::vector<Tensor>& bound, int b, BnMode mode, SpikeMode smode,
                    Diagnostics* diag) {
        Qkv out;
        out.q = project_one(s, bound, b, "q", cfg.q_proj, mode, smode, diag);
        out.k = project_one(s, bound, b, "k", cfg.k_proj, mode, smode, diag);
        out.v = project_one(s, bound, b, "v", cfg.v_proj, mode, smode, diag);
        return out;
    }

    // Multi-head S3A (Eqs 26-28): split channels, run the head core on each,
    // concatenate, then SN -> token-wise 1x1 Conv2D -> BN -> Seq2Vid (Eq 22).
    Tensor mhs3a(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                 const std::vector<Tensor>& bound, int b, BnMode mode, SpikeMode smode, BlockDiag* bd,
                 Diagnostics* diag) {
        const int d = cfg.d_model / cfg.n_heads;
        std::vector<Tensor> heads;
        for (int i = 0; i < cfg.n_heads; ++i) {
            SpikeTensor qi(slice_last(q.values, i * d, d));
            SpikeTensor ki(slice_last(k.values, i * d, d));
            SpikeTensor vi(slice_last(v.values, i * d, d));
            auto [vhat_i, gate_i] = s3a_head(qi, ki, vi, cfg.lif, smode);
            heads.push_back(vhat_i.values);
        }
        Tensor vhat = concat_last(heads);  // [T_s, N, D]
        if (bd) bd->fr_vhat = SpikeTensor(vhat).fire_rate;
        if (diag && bd) bd->vhat_tokens = vhat;
        if (diag) {
            // attention mask-sum cost: f*N*D accumulates per timestep (Fig 4)
            Tensor mask = mul(q.values, k.values);
            double f = SpikeTensor(mask).fire_rate;
            diag->trace.push_back({"block" + std::to_string(b) + ".attn.mask_sum", true,
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.d_model,
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.d_model, f});
        }

        SpikeTensor sn_out = lif_sequence(vhat, cfg.lif, smode);
        if (bd) bd->fr_attn_out = sn_out.fire_rate;
        if (diag)
            diag->trace.push_back({"block" + std::to_string(b) + ".attn.out_conv2d", true,
                                   cost::conv_paper(1, 1, 1, cfg.n_tokens(), 1, cfg.d_model, cfg.d_model),
                                   cost::conv_paper(1, 1, 1, cfg.n_tokens(), 1, cfg.d_model, cfg.d_model),
                                   sn_out.fire_rate});
        // token-wise 1x1 Conv2D over the (N, D)-as-image layout
        const Tensor& wc = bound[param_index("block" + std::to_string(b) + ".attn.out.w")];
        std::vector<Tensor> mixed;
        for (int t = 0; t < cfg.t_s; ++t) {
            Tensor img = reshape(transpose_12(reshape(slice_leading(sn_out.values, t),
                                                      Shape{1, cfg.n_tokens(), cfg.d_model})),
                                 Shape{cfg.d_model, cfg.n_tokens(), 1});
            Tensor y = conv2d(img, wc, {1, 1}, {0, 0});
            mixed.push_back(transpose_12(reshape(y, Shape{1, cfg.d_model, cfg.n_tokens()})));
        }
        Tensor conv_out = stack_leading(mixed);  // [T_s, 1, N, D] pieces stacked -> [T_s,1,N,D]
        conv_out = reshape(conv_out, Shape{cfg.t_s, cfg.n_tokens(), cfg.d_model});
        Tensor bn_out = bn_apply(conv_out, 2, "block" + std::to_string(b) + ".attn.out.bn", bound, mode);
        return seq2vid(bn_out, TokenOrigin{cfg.grid_t(), cfg.grid_h(), cfg.grid_w()});
    }

    // ---- checkpoint ---------------------------------------------------------

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json manifest;
        manifest["format"] = "spikeattn-checkpoint-v1";
        manifest["config"] = cfg;
        nlohmann::json tensors = nlohmann::json::array();
        std::ofstream blob(dir + "/weights.bin", std::ios::binary);
        if (!blob) throw ArgumentError("cannot write " + dir + "/weights.bin");
        auto dump = [&](const std::string& name, const Shape& shape, const std::vector<double>& v) {
            tensors.push_back({{"name", name}, {"shape", shape}});
            for (double x : v) {
                float y = static_cast<float>(x);
                blob.write(reinterpret_cast<const char*>(&y), sizeof(float));
            }
        };
        for (const auto& p : params_) dump(p.name, p.value.shape, p.value.values());
        for (const auto& s : stats_) {
            int c = static_cast<int>(s.stats.mean.size());
            dump(s.name + ".running_mean", Shape{std::max(c, 1)},
                 s.stats.mean.empty() ? std::vector<double>{0.0} : s.stats.mean);
            dump(s.name + ".running_var", Shape{std::max(c, 1)},
                 s.stats.var.empty() ? std::vector<double>{0.0} : s.stats.var);
            dump(s.name + ".batches", Shape{1}, {static_cast<double>(s.stats.batches)});
        }
        manifest["tensors"] = tensors;
        std::ofstream(dir + "/model.json") << manifest.dump(2) << "\n";
    }

    static Model load(const std::string& dir) {
        std::ifstream mf(dir + "/model.json");
        if (!mf) throw CheckpointError("missing manifest " + dir + "/model.json");
        nlohmann::json manifest = nlohmann::json::parse(mf);
        Model m;
        from_json_strict(manifest.at("config"), m.cfg);
        m.cfg.validate();
        m.build(0);

        std::ifstream blob(dir + "/weights.bin", std::ios::binary | std::ios::ate);
        if (!blob) throw CheckpointError("missing " + dir + "/weights.bin");
        const int64_t bytes = blob.tellg();
        blob.seekg(0);

        auto tensors = manifest.at("tensors");
        int64_t expect = 0;
        for (const auto& t : tensors) expect += numel(t.at("shape").get<Shape>());
        if (expect * static_cast<int64_t>(sizeof(float)) != bytes)
            throw CheckpointError("weights.bin length " + std::to_string(bytes) + " does not match manifest (" +
                                  std::to_string(expect * sizeof(float)) + " expected)");

        std::map<std::string, int> pidx;
        for (size_t i = 0; i < m.params_.size(); ++i) pidx[m.params_[i].name] = static_cast<int>(i);
        size_t params_assigned = 0;
        for (const auto& t : tensors) {
            std::string name = t.at("name");
            Shape shape = t.at("shape").get<Shape>();
            std::vector<float> raw(numel(shape));
            blob.read(reinterpret_cast<char*>(raw.data()), raw.size() * sizeof(float));
            std::vector<double> v(raw.begin(), raw.end());
            auto ends_with = [&](const std::string& suffix) {
                return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
            };
            if (ends_with(".running_mean") || ends_with(".running_var") || ends_with(".batches")) {
                std::string base = name.substr(0, name.rfind('.'));
                auto sit = m.stats_index_.find(base);
                if (sit == m.stats_index_.end()) throw CheckpointError("manifest names unknown stats '" + name + "'");
                BnStats& st = m.stats_[sit->second].stats;
                if (ends_with(".running_mean")) st.mean = v;
                else if (ends_with(".running_var")) st.var = v;
                else st.batches = static_cast<int64_t>(v[0]);
            } else {
                auto it = pidx.find(name);
                if (it == pidx.end()) throw CheckpointError("manifest names unknown parameter '" + name + "'");
                Param& p = m.params_[it->second];
                if (p.value.shape != shape)
                    throw CheckpointError("shape mismatch for '" + name + "': manifest " + shape_str(shape) +
                                          " vs model " + shape_str(p.value.shape));
                p.value = Tensor(shape, std::move(v));
                params_assigned++;
            }
        }
        if (params_assigned != m.params_.size())
            throw CheckpointError("manifest covers " + std::to_string(params_assigned) + " of " +
                                  std::to_string(m.params_.size()) + " parameters");
        // zero-length mean/var sentinels for never-updated stats
        for (auto& s : m.stats_)
            if (s.stats.batches == 0) {
                s.stats.mean.clear();
                s.stats.var.clear();
            }
        return m;
    }

    // Round every parameter and running stat to its f32 representation so the
    // f32 checkpoint round-trips to a bit-identical forward.
    void quantize_f32() {
        for (auto& p : params_) {
            std::vector<double> v = p.value.values();
            for (double& x : v) x = static_cast<double>(static_cast<float>(x));
            p.value = Tensor(p.value.shape, std::move(v));
        }
        for (auto& s : stats_) {
            for (double& x : s.stats.mean) x = static_cast<double>(static_cast<float>(x));
            for (double& x : s.stats.var) x = static_cast<double>(static_cast<float>(x));
        }
    }

private:
    std::vector<Param> params_;
    std::vector<NamedStats> stats_;
    std::map<std::string, int> index_;
    std::map<std::string, int> stats_index_;

    void add_param(const std::string& name, const Shape& shape, Rng& rng, bool zero = false) {
        std::vector<double> v(numel(shape));
        if (!zero) {
            int64_t fan_in = numel(shape) / shape[0];
            double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& x : v) x = rng.uniform(-bound, bound);
        }
        index_[name] = static_cast<int>(params_.size());
        params_.push_back({name, Tensor(shape, std::move(v))});
    }
    void add_bn(const std::string& name, int channels, Rng&) {
        index_[name + ".g"] = static_cast<int>(params_.size());
        params_.push_back({name + ".g", Tensor::full(Shape{channels}, 1.0)});
        index_[name + ".b"] = static_cast<int>(params_.size());
        params_.push_back({name + ".b", Tensor::zeros(Shape{channels})});
        stats_index_[name] = static_cast<int>(stats_.size());
        stats_.push_back({name, BnStats{}});
    }

    void build(uint64_t seed) {
        Rng rng(Rng::mix(seed, 0xC0FFEE));
        const int d = cfg.d_model;
        params_.clear();
        stats_.clear();
        index_.clear();
        stats_index_.clear();
        add_param("stem.conv1.w", Shape{d / 4, 3, 1, 5, 5}, rng);
        add_bn("stem.bn1", d / 4, rng);
        add_param("stem.conv2.w", Shape{d / 2, d / 4, 3, 3, 3}, rng);
        add_bn("stem.bn2", d / 2, rng);
        add_param("stem.conv3.w", Shape{d, d / 2, 3, 3, 3}, rng);
        add_bn("stem.bn3", d, rng);
        add_param("stem.conv4.w", Shape{d, d, 3, 3, 3}, rng);
        add_bn("stem.bn4", d, rng);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            std::string pre = "block" + std::to_string(b) + ".";
            auto proj = [&](const std::string& which, Proj kind) {
                if (kind == Proj::TDC) add_param(pre + which + ".w", Shape{d, d, 3, 3, 3}, rng);
                else if (kind == Proj::Conv3D) add_param(pre + which + ".w", Shape{d, d, 1, 1, 1}, rng);
                add_bn(pre + which + ".bn", d, rng);
            };
            proj("q", cfg.q_proj);
            proj("k", cfg.k_proj);
            proj("v", cfg.v_proj);
            add_param(pre + "attn.out.w", Shape{d, d, 1, 1}, rng);
            add_bn(pre + "attn.out.bn", d, rng);
            add_param(pre + "mlp.w1", Shape{cfg.mlp_hidden(), d}, rng);
            add_bn(pre + "mlp.bn1", cfg.mlp_hidden(), rng);
            add_param(pre + "mlp.w2", Shape{d, cfg.mlp_hidden()}, rng);
            add_bn(pre + "mlp.bn2", d, rng);
        }
        add_param("head.conv1.w", Shape{d, d, 3, 1, 1}, rng);
        add_bn("head.bn1", d, rng);
        add_param("head.conv2.w", Shape{d / 2, d, 3, 1, 1}, rng);
        add_bn("head.bn2", d / 2, rng);
        add_param("head.final.w", Shape{1, d / 2, 1, 1, 1}, rng);
        add_param("head.final.b", Shape{1}, rng, /*zero=*/true);
        quantize_f32();
    }

    void check_geometry(const Tensor& x) const {
        if (x.shape.size() != 4 || x.shape[0] != 3)
            throw ConfigError("forward: expected clip tensor [3,T,H,W], got " + shape_str(x.shape));
        if (x.shape[1] != cfg.in_t || x.shape[2] != cfg.in_h || x.shape[3] != cfg.in_w)
            throw ConfigError("forward: clip geometry " + shape_str(x.shape) + " does not match config (T=" +
                              std::to_string(cfg.in_t) + ",H=" + std::to_string(cfg.in_h) + ",W=" +
                              std::to_string(cfg.in_w) + ")");
    }

    Tensor bn_apply(const Tensor& x, int channel_axis, const std::string& name, const std::vector<Tensor>& bound,
                    BnMode mode) {
        return batchnorm(x, channel_axis, bound[param_index(name + ".g")], bound[param_index(name + ".b")],
                         stats_of(name), mode);
    }

    static Tensor clamped_pool(const Tensor& x, std::array<int, 3> want) {
        std::array<int, 3> w = {std::min(want[0], x.shape[1]), std::min(want[1], x.shape[2]),
                                std::min(want[2], x.shape[3])};
        if (w == std::array<int, 3>{1, 1, 1}) return x;
        return maxpool3d(x, w, w);
    }

    Tensor stem_stage(const Tensor& x, const std::vector<Tensor>& bound, const std::string& name,
                      std::array<int, 3> k, std::array<int, 3> stride, std::array<int, 3> pad, int ci, int co,
                      BnMode mode, Diagnostics* diag, bool ann) {
        const Tensor& w = bound[param_index(name + ".w")];
        Tensor y = conv3d(x, w, stride, pad);
        if (diag && ann) {
            diag->trace.push_back({name, false,
                                   cost::conv_exact(k[0], k[1], k[2], y.shape[1], y.shape[2], y.shape[3], ci, co),
                                   cost::conv_paper(k[1], k[2], y.shape[1], y.shape[2], y.shape[3], ci, co), 0.0});
        }
        std::string bn_name = "stem.bn" + name.substr(name.size() - 1);
        y = bn_apply(y, 0, bn_name, bound, mode);
        return relu(y);
    }

    // SNN stem: direct-encode the input first, run stages per timestep with a
    // LIF after each conv+BN except the last (which stays real so the first
    // block's SN keeps Eq-8 semantics).
    Tensor patch_embed_snn(const Tensor& x, const std::vector<Tensor>& bound, BnMode mode, SpikeMode smode,
                           Diagnostics* diag) {
        const int d = cfg.d_model;
        Tensor u = direct_encode(x, cfg.t_s);  // [T_s,3,T,H,W]
        struct Stage {
            const char* conv;
            const char* bn;
            std::array<int, 3> k, stride, pad, pool;
            int ci, co;
            bool lif;
        };
        const std::vector<Stage> stages = {
            {"stem.conv1.w", "stem.bn1", {1, 5, 5}, {1, 2, 2}, {0, 2, 2}, {1, 2, 2}, 3, d / 4, true},
            {"stem.conv2.w", "stem.bn2", {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, {2, 2, 2}, d / 4, d / 2, true},
            {"stem.conv3.w", "stem.bn3", {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, {2, 2, 2}, d / 2, d, true},
            {"stem.conv4.w", "stem.bn4", {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, {0, 0, 0}, d, d, false},
        };
        bool first = true;
        for (const auto& st : stages) {
            const Tensor& w = bound[param_index(st.conv)];
            double fr_in = 0.0;
            if (!first) fr_in = SpikeTensor(u).fire_rate;
            std::vector<Tensor> per_t;
            for (int t = 0; t < cfg.t_s; ++t)
                per_t.push_back(conv3d(slice_leading(u, t), w, st.stride, st.pad));
            Tensor y = stack_leading(per_t);
            if (diag) {
                int64_t fe = cost::conv_exact(st.k[0], st.k[1], st.k[2], y.shape[2], y.shape[3], y.shape[4], st.ci, st.co);
                int64_t fp = cost::conv_paper(st.k[1], st.k[2], y.shape[2], y.shape[3], y.shape[4], st.ci, st.co);
                // first conv reads the static direct-encoded input: one ANN pass
                diag->trace.push_back({std::string(st.conv, strlen(st.conv) - 2), !first, fe, fp, fr_in});
            }
            y = bn_apply(y, 1, st.bn, bound, mode);
            if (st.lif) {
                SpikeTensor s = lif_sequence(y, cfg.lif, smode);
                if (diag) diag->stem_fire_rates.push_back(s.fire_rate);
                u = s.values;
            } else {
                u = y;
            }
            if (st.pool[0] > 0 && !(st.pool == std::array<int, 3>{1, 1, 1})) {
                std::vector<Tensor> pooled;
                for (int t = 0; t < cfg.t_s; ++t) {
                    Tensor xt = slice_leading(u, t);
                    std::array<int, 3> pw = {std::min(st.pool[0], xt.shape[1]), std::min(st.pool[1], xt.shape[2]),
                                             std::min(st.pool[2], xt.shape[3])};
                    pooled.push_back(pw == std::array<int, 3>{1, 1, 1} ? xt : maxpool3d(xt, pw, pw));
                }
                u = stack_leading(pooled);
            }
            first = false;
        }
        return u;
    }

    SpikeTensor project_one(const SpikeTensor& s, const std::vector<Tensor>& bound, int b, const std::string& which,
                            Proj kind, BnMode mode, SpikeMode smode, Diagnostics* diag) {
        std::string pre = "block" + std::to_string(b) + "." + which;
        Tensor y;
        if (kind == Proj::None) {
            y = s.values;
        } else {
            const Tensor& w = bound[param_index(pre + ".w")];
            std::vector<Tensor> per_t;
            for (int t = 0; t < cfg.t_s; ++t) {
                Tensor xt = slice_leading(s.values, t);
                per_t.push_back(kind == Proj::TDC ? tdc(xt, w, cfg.tdc_theta) : conv3d(xt, w, {1, 1, 1}, {0, 0, 0}));
            }
            y = stack_leading(per_t);
        }
        if (diag) {
            int64_t unit = static_cast<int64_t>(cfg.n_tokens()) * cfg.d_model * cfg.d_model;
            int64_t fe = kind == Proj::TDC ? 28 * unit : (kind == Proj::Conv3D ? unit : 0);
            int64_t fp = kind == Proj::TDC ? 10 * unit : (kind == Proj::Conv3D ? unit : 0);
            if (kind != Proj::None)
                diag->trace.push_back({pre + (kind == Proj::TDC ? ".tdc" : ".conv3d"), true, fe, fp, s.fire_rate});
        }
        y = bn_apply(y, 1, pre + ".bn", bound, mode);
        SpikeTensor out = lif_sequence(y, cfg.lif, smode);
        return SpikeTensor(vid2seq(out.values));
    }

    Tensor sa_branch(const SpikeTensor& s, const std::vector<Tensor>& bound, int b, BnMode mode, SpikeMode smode,
                     BlockDiag* bd, Diagnostics* diag) {
        Qkv qkv = project_qkv(s, bound, b, mode, smode, diag);
        if (bd) {
            bd->fr_q = qkv.q.fire_rate;
            bd->fr_k = qkv.k.fire_rate;
            bd->fr_v = qkv.v.fire_rate;
            if (diag) bd->v_tokens = qkv.v.values;
        }
        return mhs3a(qkv.q, qkv.k, qkv.v, bound, b, mode, smode, bd, diag);
    }

    Tensor mlp_branch(const SpikeTensor& s, const std::vector<Tensor>& bound, int b, BnMode mode, SpikeMode smode,
                      BlockDiag* bd, Diagnostics* diag) {
        std::string pre = "block" + std::to_string(b) + ".mlp";
        Tensor tokens = vid2seq(s.values);  // [T_s, N, D]
        if (diag)
            diag->trace.push_back({pre + ".linear1", true,
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.d_model * cfg.mlp_hidden(),
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.d_model * cfg.mlp_hidden(),
                                   s.fire_rate});
        Tensor h = linear_tokens(tokens, bound[param_index(pre + ".w1")]);
        h = bn_apply(h, 2, pre + ".bn1", bound, mode);
        SpikeTensor hs = lif_sequence(h, cfg.lif, smode);
        if (bd) bd->fr_mlp_hidden = hs.fire_rate;
        if (diag)
            diag->trace.push_back({pre + ".linear2", true,
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.mlp_hidden() * cfg.d_model,
                                   static_cast<int64_t>(cfg.n_tokens()) * cfg.mlp_hidden() * cfg.d_model,
                                   hs.fire_rate});
        Tensor o = linear_tokens(hs.values, bound[param_index(pre + ".w2")]);
        o = bn_apply(o, 2, pre + ".bn2", bound, mode);
        return seq2vid(o, TokenOrigin{cfg.grid_t(), cfg.grid_h(), cfg.grid_w()});
    }

    Tensor head_stage(const Tensor& x, const std::vector<Tensor>& bound, const std::string& conv,
                      const std::string& bn, int ci, int co, BnMode mode, Diagnostics* diag, bool ann) {
        Tensor y = upsample_time(x, 2);
        y = conv3d(y, bound[param_index(conv)], {1, 1, 1}, {1, 0, 0});
        if (diag && ann)
            diag->trace.push_back({conv.substr(0, conv.size() - 2), false,
                                   cost::conv_exact(3, 1, 1, y.shape[1], y.shape[2], y.shape[3], ci, co),
                                   cost::conv_paper(1, 1, y.shape[1], y.shape[2], y.shape[3], ci, co), 0.0});
        y = bn_apply(y, 0, bn, bound, mode);
        return elu(y);
    }

    Tensor predictor_head(const Tensor& u_mean, const std::vector<Tensor>& bound, BnMode mode, Diagnostics* diag) {
        const int d = cfg.d_model;
        Tensor h = head_stage(u_mean, bound, "head.conv1.w", "head.bn1", d, d, mode, diag, true);
        h = head_stage(h, bound, "head.conv2.w", "head.bn2", d, d / 2, mode, diag, true);
        // spatial global average pool, then 1x1x1 projection to one channel
        h = mean_axis(mean_axis(h, 3), 2);  // [D/2, T]
        h = reshape(h, Shape{d / 2, cfg.in_t, 1, 1});
        if (diag)
            diag->trace.push_back({"head.final", false, static_cast<int64_t>(cfg.in_t) * (d / 2),
                                   static_cast<int64_t>(cfg.in_t) * (d / 2), 0.0});
        Tensor y = conv3d(h, bound[param_index("head.final.w")], {1, 1, 1}, {0, 0, 0});
        y = add_scalar_t(y, bound[param_index("head.final.b")]);
        return reshape(y, Shape{cfg.in_t});
    }

    // SNN head: run the two stages per spike timestep with LIF activations and
    // average the final projections over T_s.
    Tensor predictor_head_snn(const Tensor& u, const std::vector<Tensor>& bound, BnMode mode, SpikeMode smode,
                              Diagnostics* diag) {
        const int d = cfg.d_model;
        auto stage = [&](const Tensor& x, const std::string& conv, const std::string& bn, int ci, int co) {
            std::vector<Tensor> per_t;
            for (int t = 0; t < cfg.t_s; ++t)
                per_t.push_back(conv3d(upsample_time(slice_leading(x, t), 2), bound[param_index(conv)], {1, 1, 1},
                                       {1, 0, 0}));
            Tensor y = stack_leading(per_t);
            if (diag)
                diag->trace.push_back({conv.substr(0, conv.size() - 2), true,
                                       cost::conv_exact(3, 1, 1, y.shape[2], y.shape[3], y.shape[4], ci, co),
                                       cost::conv_paper(1, 1, y.shape[2], y.shape[3], y.shape[4], ci, co),
                                       SpikeTensor(x).fire_rate});
            y = bn_apply(y, 1, bn, bound, mode);
            return lif_sequence(y, cfg.lif, smode).values;
        };
        Tensor h = stage(u, "head.conv1.w", "head.bn1", d, d);
        h = stage(h, "head.conv2.w", "head.bn2", d, d / 2);
        std::vector<Tensor> waves;
        for (int t = 0; t < cfg.t_s; ++t) {
            Tensor xt = slice_leading(h, t);
            xt = mean_axis(mean_axis(xt, 3), 2);
            xt = reshape(xt, Shape{d / 2, cfg.in_t, 1, 1});
            Tensor y = conv3d(xt, bound[param_index("head.final.w")], {1, 1, 1}, {0, 0, 0});
            waves.push_back(reshape(y, Shape{cfg.in_t}));
        }
        if (diag)
            diag->trace.push_back({"head.final", true, static_cast<int64_t>(cfg.in_t) * (d / 2),
                                   static_cast<int64_t>(cfg.in_t) * (d / 2), SpikeTensor(h).fire_rate});
        Tensor y = scale(sum_axis(stack_leading(waves), 0), 1.0 / cfg.t_s);
        return add_scalar_t(y, bound[param_index("head.final.b")]);
    }
};

}  // namespace spikeattn
