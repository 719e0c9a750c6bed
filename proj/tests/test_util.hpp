#pragma once

// Shared helpers for the test suite: random tensors and a central
// finite-difference gradient check against the tape.

#include <functional>

#include "spikeattn/rng.hpp"
#include "spikeattn/tensor.hpp"

namespace testutil {

using spikeattn::Rng;
using spikeattn::Shape;
using spikeattn::Tape;
using spikeattn::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(spikeattn::numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v));
}

// fn maps leaf tensors (already on the given tape) to a scalar loss.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Central finite differences (step h) on every element of every input versus
// the tape gradient. Returns the worst relative error.
inline double fd_check(const LossFn& fn, std::vector<Tensor> inputs, double h = 1e-3) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Tensor> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
        Tensor loss = fn(tape, leaves);
        tape.backward(loss);
        for (const auto& l : leaves) analytic.push_back(tape.grad(l));
    }
    auto eval = [&](const std::vector<Tensor>& ins) {
        Tape tape;
        std::vector<Tensor> leaves;
        for (const auto& t : ins) leaves.push_back(tape.leaf(t));
        return fn(tape, leaves).item();
    };
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t j = 0; j < inputs[i].numel(); ++j) {
            auto perturb = [&](double delta) {
                std::vector<Tensor> ins = inputs;
                std::vector<double> v = ins[i].values();
                v[j] += delta;
                ins[i] = Tensor(ins[i].shape, std::move(v));
                return eval(ins);
            };
            double fd = (perturb(h) - perturb(-h)) / (2.0 * h);
            double an = analytic[i].values()[j];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace testutil
