#pragma once

// Composite loss L = alpha * L_time + beta * (L_CE + L_LD) with the
// exponential beta schedule beta = beta0 * eta^((epoch-1)/epochs), Adam with
// decoupled weight decay, and a deterministic training loop.

#include <iomanip>
#include <sstream>

#include "spikeattn/metrics.hpp"
#include "spikeattn/model.hpp"
#include "spikeattn/video.hpp"

namespace spikeattn {

struct LossWeights {
    double alpha_time = 0.1;
    double beta0 = 1.0;
    double eta = 5.0;
    int epoch_current = 1;
    int epoch_total = 10;
    double label_sigma = 1.0;  // bpm
    int hr_lo = 40, hr_hi = 180;

    void validate() const {
        if (beta0 <= 0.0) throw ArgumentError("LossWeights: beta0 must be > 0");
        if (eta < 1.0) throw ArgumentError("LossWeights: eta must be >= 1");
        if (epoch_current < 1 || epoch_total < 1) throw ArgumentError("LossWeights: bad epoch fields");
    }
};

struct TrainConfig {
    double lr = 3e-3;
    double weight_decay = 5e-5;
    int batch_size = 4;
    int epochs = 10;
    uint64_t seed = 0;
    double val_fraction = 0.2;
    LossWeights loss;

    void validate() const {
        if (lr < 0.0) throw ArgumentError("TrainConfig: lr must be >= 0");
        if (batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
        if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
        loss.validate();
    }
};

// Negative Pearson loss (Eq 12 / Eq 25): 1 - rho(pred, gt).
inline Tensor loss_time(const Tensor& pred, const Tensor& gt) {
    return add_const(scale(pearson(pred, gt), -1.0), 1.0);
}

inline double beta_schedule(const LossWeights& w) {
    w.validate();
    return w.beta0 * std::pow(w.eta, static_cast<double>(w.epoch_current - 1) / w.epoch_total);
}

// Frequency losses over exact 1-bpm spectral bins [hr_lo, hr_hi]:
//   logits = band powers normalized to sum 1 (scale-invariant)
//   ce     = cross-entropy of softmax(logits) against the ground-truth bin
//   ld     = KL(gaussian label distribution || softmax(logits))
struct FreqLoss {
    Tensor ce, ld;
};

inline std::vector<double> gaussian_label(double gt_hr, const LossWeights& w) {
    const int bins = w.hr_hi - w.hr_lo + 1;
    std::vector<double> label(bins);
    double norm = 0.0;
    for (int b = 0; b < bins; ++b) {
        double d = (w.hr_lo + b) - gt_hr;
        label[b] = std::exp(-d * d / (2.0 * w.label_sigma * w.label_sigma));
        norm += label[b];
    }
    for (double& v : label) v /= norm;
    return label;
}

inline FreqLoss freq_losses_from_logits(const Tensor& logits, int gt_bin, const std::vector<double>& label) {
    Tensor logp = log_softmax(logits);
    FreqLoss out;
    out.ce = scale(gather_scalar(logp, gt_bin), -1.0);
    double label_entropy = 0.0;
    for (double v : label)
        if (v > 0.0) label_entropy -= v * std::log(v);
    // KL(g||p) = -H(g) - sum g*logp
    out.ld = add_const(scale(dot_const(logp, label), -1.0), -label_entropy);
    return out;
}

inline FreqLoss loss_freq(const Tensor& pred, double fps, double gt_hr, const LossWeights& w) {
    if (pred.numel() < 2) throw ArgumentError("loss_freq: prediction too short");
    if (gt_hr < w.hr_lo || gt_hr > w.hr_hi)
        throw ArgumentError("loss_freq: gt_hr " + std::to_string(gt_hr) + " outside [" + std::to_string(w.hr_lo) +
                            "," + std::to_string(w.hr_hi) + "]");
    const int bins = w.hr_hi - w.hr_lo + 1;
    Tensor power = bpm_power(center(pred), fps, w.hr_lo, w.hr_hi);
    Tensor logits = normalize_sum(power);
    const int gt_bin = std::min(bins - 1, std::max(0, static_cast<int>(std::lround(gt_hr)) - w.hr_lo));
    return freq_losses_from_logits(logits, gt_bin, gaussian_label(gt_hr, w));
}

// ---------------------------------------------------------------------------
// optimizer

class Adam {
public:
    Adam(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
        for (const auto& p : model.params()) {
            m_.push_back(std::vector<double>(p.value.numel(), 0.0));
            v_.push_back(std::vector<double>(p.value.numel(), 0.0));
        }
    }

    // grads[i] aligned with model.params()[i]; decoupled weight decay.
    void step(const std::vector<Tensor>& grads) {
        t_++;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_), bc2 = 1.0 - std::pow(b2, t_);
        for (size_t i = 0; i < model_.params().size(); ++i) {
            auto& p = model_.params()[i];
            const auto& g = grads[i].values();
            std::vector<double> w = p.value.values();
            for (size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
                v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
                double mhat = m_[i][j] / bc1, vhat = v_[i][j] / bc2;
                w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + eps) + cfg_.weight_decay * w[j]);
            }
            p.value = Tensor(p.value.shape, std::move(w));
        }
        model_.quantize_f32();
    }

private:
    Model& model_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

// ---------------------------------------------------------------------------
// training loop

struct TrainSample {
    Tensor frames;              // preprocessed [3,T,H,W]
    std::vector<double> label;  // preprocessed wave, length T
    double hr_bpm = 0.0;
    double fps = 30.0;
};

struct EvalSample {
    Tensor frames;
    double hr_bpm = 0.0;
    double fps = 30.0;
};

struct EpochRow {
    int epoch = 0;
    double l_time = 0.0, l_ce = 0.0, l_ld = 0.0, beta = 0.0, val_mae = 0.0;
};

struct TrainResult {
    std::vector<EpochRow> history;
    double best_val_mae = 0.0;
    int best_epoch = 0;
};

inline std::string history_csv(const std::vector<EpochRow>& history) {
    std::ostringstream os;
    os << "epoch,l_time,l_ce,l_ld,beta,val_mae\n";
    os << std::setprecision(10);
    for (const auto& r : history)
        os << r.epoch << "," << r.l_time << "," << r.l_ce << "," << r.l_ld << "," << r.beta << "," << r.val_mae
           << "\n";
    return os.str();
}

inline double eval_hr_mae(Model& model, const std::vector<EvalSample>& val) {
    auto bound = model.bind_eval();
    double mae = 0.0;
    for (const auto& s : val) {
        Tensor y = model.forward(s.frames, bound, BnMode::Eval);
        PulseWave w{y.values(), s.fps};
        double bpm = estimate_hr(bandpass(w)).bpm;
        mae += std::abs(bpm - s.hr_bpm);
    }
    return mae / val.size();
}

// One optimization step over a batch: mean loss, one backward, one Adam step.
// Returns the batch-mean loss components.
struct StepLosses {
    double total = 0.0, l_time = 0.0, l_ce = 0.0, l_ld = 0.0;
};

inline StepLosses train_step(Model& model, Adam& opt, const std::vector<const TrainSample*>& batch,
                             const LossWeights& w) {
    Tape tape;
    auto bound = model.bind(tape);
    const double beta = beta_schedule(w);
    Tensor total = Tensor::scalar(0.0);
    StepLosses out;
    for (const TrainSample* s : batch) {
        Tensor y = model.forward(s->frames, bound, BnMode::Train);
        Tensor gt(Shape{static_cast<int>(s->label.size())}, s->label);
        Tensor lt = loss_time(y, gt);
        FreqLoss lf = loss_freq(y, s->fps, s->hr_bpm, w);
        Tensor sample_loss = add(scale(lt, w.alpha_time), scale(add(lf.ce, lf.ld), beta));
        total = total.on_tape() || sample_loss.on_tape() ? add(total, sample_loss) : sample_loss;
        out.l_time += lt.item();
        out.l_ce += lf.ce.item();
        out.l_ld += lf.ld.item();
    }
    Tensor loss = scale(total, 1.0 / batch.size());
    out.total = loss.item();
    out.l_time /= batch.size();
    out.l_ce /= batch.size();
    out.l_ld /= batch.size();
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(bound.size());
    for (const auto& leaf : bound) grads.push_back(tape.grad(leaf));
    opt.step(grads);
    return out;
}

// Full loop: shuffled batches, per-epoch validation MAE, best checkpoint kept
// in memory (caller persists it). Aborts with a diagnostic on divergence.
inline TrainResult train(Model& model, const std::vector<TrainSample>& train_set,
                         const std::vector<EvalSample>& val_set, const TrainConfig& cfg, Model* best_out = nullptr) {
    cfg.validate();
    if (train_set.empty()) throw ArgumentError("train: empty training set");
    Adam opt(model, cfg);
    Rng rng(Rng::mix(cfg.seed, 0x7EA1));
    TrainResult result;
    result.best_val_mae = std::numeric_limits<double>::infinity();

    std::vector<int> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        LossWeights w = cfg.loss;
        w.epoch_current = epoch;
        w.epoch_total = cfg.epochs;
        rng.shuffle(order);
        EpochRow row;
        row.epoch = epoch;
        row.beta = beta_schedule(w);
        int steps = 0;
        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            std::vector<const TrainSample*> batch;
            for (size_t j = at; j < std::min(order.size(), at + cfg.batch_size); ++j)
                batch.push_back(&train_set[order[j]]);
            StepLosses sl;
            try {
                sl = train_step(model, opt, batch, w);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(steps) + ": " + e.what());
            }
            row.l_time += sl.l_time;
            row.l_ce += sl.l_ce;
            row.l_ld += sl.l_ld;
            steps++;
        }
        row.l_time /= steps;
        row.l_ce /= steps;
        row.l_ld /= steps;
        row.val_mae = val_set.empty() ? 0.0 : eval_hr_mae(model, val_set);
        result.history.push_back(row);
        if (!val_set.empty() && row.val_mae < result.best_val_mae) {
            result.best_val_mae = row.val_mae;
            result.best_epoch = epoch;
            if (best_out) *best_out = model;
        }
    }
    if (val_set.empty() && best_out) *best_out = model;
    return result;
}

// ---------------------------------------------------------------------------
// dataset assembly from stored clips

inline TrainSample make_train_sample(const StoredClip& sc) {
    TrainSample s;
    s.frames = prepare_frames(sc.clip);
    s.label = prepare_label(sc.wave);
    s.hr_bpm = sc.hr_bpm;
    s.fps = sc.clip.fps;
    return s;
}

inline EvalSample make_eval_sample(const StoredClip& sc) {
    EvalSample s;
    s.frames = prepare_frames(sc.clip);
    s.hr_bpm = sc.hr_bpm;
    s.fps = sc.clip.fps;
    return s;
}

}  // namespace spikeattn
