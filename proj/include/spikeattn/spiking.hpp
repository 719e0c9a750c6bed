#pragma once

// Leaky integrate-and-fire dynamics with the arctan surrogate gradient.
//
//   H[t] = V[t-1] + (1/tau) * (X[t] - (V[t-1] - V_reset))
//   S[t] = Theta(H[t] - V_th)            (fires on H >= V_th, closed threshold)
//   V[t] = H[t] * (1 - S[t]) + V_reset * S[t]
//
// The Heaviside gets the surrogate backward  g'(x) = alpha / (2*(1+((pi/2)*alpha*x)^2)),
// registered as a custom rule on the tape so the default (zero) rule is never
// used. SpikeMode::Smooth swaps Theta for its smooth primitive
// g(x) = atan((pi/2)*alpha*x)/pi + 1/2 so whole-network finite-difference
// checks are meaningful; in that mode "spikes" are pseudo-values in (0,1).

#include <cmath>

#include "spikeattn/tensor.hpp"

namespace spikeattn {

struct LifParams {
    double tau = 2.0;
    double v_th = 1.0;
    double v_reset = 0.0;
    double alpha = 2.0;  // surrogate slope

    void validate() const {
        if (tau <= 0.0) throw ArgumentError("LifParams: tau must be > 0");
        if (v_th <= v_reset) throw ArgumentError("LifParams: v_th must exceed v_reset");
        if (alpha <= 0.0) throw ArgumentError("LifParams: alpha must be > 0");
    }
};

enum class SpikeMode { Binary, Smooth };

struct LifState {
    Tensor v;  // membrane potential, persists across the timesteps of one pass
};

// When enabled, every SpikeTensor construction asserts exact {0,1} values.
// Off by default because gradient-check (smooth) mode legitimately produces
// pseudo-spikes in (0,1).
inline bool& strict_binary_checks() {
    static bool on = false;
    return on;
}

struct SpikeTensor {
    Tensor values;
    double fire_rate = 0.0;

    SpikeTensor() = default;
    explicit SpikeTensor(Tensor t) : values(std::move(t)) {
        if (values.numel() == 0) throw ArgumentError("SpikeTensor: empty tensor");
        int64_t ones = 0;
        for (double v : values.values()) {
            if (strict_binary_checks() && v != 0.0 && v != 1.0)
                throw NumericError("spike tensor holds a non-binary value " + std::to_string(v));
            if (v != 0.0) ones++;
        }
        fire_rate = static_cast<double>(ones) / values.numel();
    }
};

inline double fire_rate(const SpikeTensor& s) { return s.fire_rate; }

// Elementwise surrogate derivative, Eq-4 form.
inline Tensor surrogate_grad(const Tensor& x, double alpha) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) {
        double u = M_PI_2 * alpha * xv[i];
        out[i] = alpha / (2.0 * (1.0 + u * u));
    }
    return Tensor(x.shape, std::move(out));
}

namespace detail {

// Spike nonlinearity with the surrogate registered for binary mode.
inline Tensor spike_fn(const Tensor& shifted, const LifParams& p, SpikeMode mode) {
    if (mode == SpikeMode::Smooth) return smooth_spike(shifted, p.alpha);
    Tensor s = heaviside_ge(shifted);
    if (s.on_tape()) {
        int parent = shifted.node;
        auto xd = shifted.data;
        double alpha = p.alpha;
        s.tape->set_custom_backward(s.node, [parent, xd, alpha](const std::vector<double>& g, Tape& t) {
            if (parent < 0) return;
            std::vector<double> gx(g.size());
            for (size_t i = 0; i < g.size(); ++i) {
                double u = M_PI_2 * alpha * (*xd)[i];
                gx[i] = g[i] * alpha / (2.0 * (1.0 + u * u));
            }
            t.accumulate(parent, gx);
        });
    }
    return s;
}

}  // namespace detail

// One LIF step. state.v must match x's shape; the returned state carries the
// post-spike membrane.
inline std::pair<SpikeTensor, LifState> lif_step(const Tensor& x, const LifState& state, const LifParams& p,
                                                 SpikeMode mode = SpikeMode::Binary) {
    p.validate();
    if (!same_shape(x.shape, state.v.shape))
        throw DimensionError("lif_step: input " + shape_str(x.shape) + " vs state " + shape_str(state.v.shape));
    // H = (1 - 1/tau) * V + (1/tau) * X + v_reset/tau
    Tensor h = lincomb(1.0 / p.tau, x, 1.0 - 1.0 / p.tau, state.v);
    if (p.v_reset != 0.0) h = add_const(h, p.v_reset / p.tau);
    Tensor s = detail::spike_fn(add_const(h, -p.v_th), p, mode);
    // V' = H - H*S + v_reset*S
    Tensor v_next = sub(h, mul(h, s));
    if (p.v_reset != 0.0) v_next = add(v_next, scale(s, p.v_reset));
    return {SpikeTensor(s), LifState{v_next}};
}

// Applies lif_step over the leading (spike-time) axis with fresh state.
inline SpikeTensor lif_sequence(const Tensor& x_seq, const LifParams& p, SpikeMode mode = SpikeMode::Binary) {
    if (x_seq.shape.empty() || x_seq.shape[0] < 1)
        throw ArgumentError("lif_sequence: needs at least one timestep");
    const int steps = x_seq.shape[0];
    Shape tail(x_seq.shape.begin() + 1, x_seq.shape.end());
    Tensor v0 = Tensor::zeros(tail);
    if (p.v_reset != 0.0) v0 = Tensor::full(tail, p.v_reset);
    LifState state{v0};
    std::vector<Tensor> spikes;
    spikes.reserve(steps);
    for (int t = 0; t < steps; ++t) {
        auto [s, next] = lif_step(slice_leading(x_seq, t), state, p, mode);
        spikes.push_back(s.values);
        state = next;
    }
    return SpikeTensor(stack_leading(spikes));
}

// Direct encoding: replicate x across t_s spike timesteps (Eq 7).
inline Tensor direct_encode(const Tensor& x, int t_s) {
    if (t_s < 1) throw ArgumentError("direct_encode: t_s must be >= 1, got " + std::to_string(t_s));
    return repeat_leading(x, t_s);
}

}  // namespace spikeattn
