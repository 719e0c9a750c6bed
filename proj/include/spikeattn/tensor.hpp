#pragma once

// Dense N-D tensor with reverse-mode autodiff on an explicit gradient tape.
// Values are row-major f64 in memory (persisted state is f32, see io paths);
// reductions and conv inner loops accumulate in f64. Tensors are immutable
// after creation; the tape is single-writer and replays nodes in exact
// reverse creation order, which is reverse topological order because inputs
// always predate their consumers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "spikeattn/common.hpp"

namespace spikeattn {

class Tape;

struct Tensor {
    Shape shape;
    std::shared_ptr<const std::vector<double>> data;
    Tape* tape = nullptr;  // non-owning; null for constants
    int node = -1;         // handle into the tape, -1 when untracked

    Tensor() = default;
    Tensor(Shape s, std::vector<double> values)
        : shape(std::move(s)), data(std::make_shared<const std::vector<double>>(std::move(values))) {
        if (static_cast<int64_t>(data->size()) != ::spikeattn::numel(shape))
            throw DimensionError("tensor data length " + std::to_string(data->size()) +
                                 " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(const Shape& s) { return Tensor(s, std::vector<double>(::spikeattn::numel(s), 0.0)); }
    static Tensor full(const Shape& s, double v) { return Tensor(s, std::vector<double>(::spikeattn::numel(s), v)); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    int64_t numel() const { return ::spikeattn::numel(shape); }
    const std::vector<double>& values() const { return *data; }
    double item() const {
        if (numel() != 1) throw ArgumentError("item() requires a scalar tensor, got " + shape_str(shape));
        return (*data)[0];
    }
    bool on_tape() const { return tape != nullptr && node >= 0; }
};

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
}

struct BnStats {
    std::vector<double> mean, var;
    int64_t batches = 0;  // number of recorded updates
};

enum class BnMode { Train, Eval };

class Tape {
public:
    using BackwardFn = std::function<void(const std::vector<double>& grad_out, Tape&)>;

    Tensor leaf(const Tensor& value) {
        Tensor t = value;
        t.tape = this;
        t.node = record({}, nullptr, t.shape);
        return t;
    }

    // Records an op. backward receives d(loss)/d(output) and must call
    // accumulate() for each taped parent it wants to feed.
    int record(std::vector<int> parents, BackwardFn backward, const Shape& out_shape) {
        nodes_.push_back(Node{std::move(parents), std::move(backward)});
        shapes_.push_back(out_shape);
        return static_cast<int>(nodes_.size()) - 1;
    }

    // An op instance with a registered custom rule never uses its default rule.
    void set_custom_backward(int node, BackwardFn fn) { custom_[node] = std::move(fn); }

    void accumulate(int node, const std::vector<double>& g) {
        auto& slot = grads_[node];
        if (slot.empty()) slot.assign(g.begin(), g.end());
        else
            for (size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }

    void backward(const Tensor& loss) {
        if (!loss.on_tape() || loss.tape != this) throw ArgumentError("backward: loss is not on this tape");
        if (loss.numel() != 1) throw ArgumentError("backward: loss must be a scalar");
        if (consumed_) throw ArgumentError("backward: tape already consumed; a second backward is rejected");
        consumed_ = true;
        grads_.assign(nodes_.size(), {});
        grads_[loss.node] = {1.0};
        for (int id = loss.node; id >= 0; --id) {
            if (grads_[id].empty()) continue;
            auto it = custom_.find(id);
            if (it != custom_.end()) {
                it->second(grads_[id], *this);
            } else if (nodes_[id].backward) {
                nodes_[id].backward(grads_[id], *this);
            }
            if (!is_leaf(id)) grads_[id].clear();  // free as we go; leaf grads stay queryable
        }
    }

    Tensor grad(const Tensor& t) const {
        if (!t.on_tape() || t.tape != this) throw ArgumentError("grad: tensor is not on this tape");
        if (!consumed_) throw ArgumentError("grad: backward has not run");
        if (grads_[t.node].empty()) return Tensor::zeros(t.shape);
        return Tensor(t.shape, grads_[t.node]);
    }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::vector<int> parents;
        BackwardFn backward;
    };
    bool is_leaf(int id) const { return nodes_[id].parents.empty() && !nodes_[id].backward; }

    std::vector<Node> nodes_;
    std::vector<Shape> shapes_;
    std::vector<std::vector<double>> grads_;
    std::unordered_map<int, BackwardFn> custom_;
    bool consumed_ = false;
};

namespace detail {

inline Tape* joint_tape(const Tensor& a, const Tensor& b) {
    if (a.on_tape() && b.on_tape() && a.tape != b.tape)
        throw ArgumentError("operands live on different tapes");
    if (a.on_tape()) return a.tape;
    if (b.on_tape()) return b.tape;
    return nullptr;
}

inline Tensor finish(Tape* tape, Shape shape, std::vector<double> out, std::vector<int> parents,
                     Tape::BackwardFn backward, const char* op) {
    check_finite(out, op);
    Tensor r(std::move(shape), std::move(out));
    if (tape) {
        r.tape = tape;
        r.node = tape->record(std::move(parents), std::move(backward), r.shape);
    }
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape, b.shape))
        throw DimensionError("add: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tape* tape = detail::joint_tape(a, b);
    std::vector<double> out(a.numel());
    const auto &av = a.values(), &bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    int an = a.node, bn = b.node;
    return detail::finish(tape, a.shape, std::move(out), {an, bn},
                          [an, bn](const std::vector<double>& g, Tape& t) {
                              if (an >= 0) t.accumulate(an, g);
                              if (bn >= 0) t.accumulate(bn, g);
                          },
                          "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape, b.shape))
        throw DimensionError("sub: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tape* tape = detail::joint_tape(a, b);
    std::vector<double> out(a.numel());
    const auto &av = a.values(), &bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    int an = a.node, bn = b.node;
    return detail::finish(tape, a.shape, std::move(out), {an, bn},
                          [an, bn](const std::vector<double>& g, Tape& t) {
                              if (an >= 0) t.accumulate(an, g);
                              if (bn >= 0) {
                                  std::vector<double> gb(g.size());
                                  for (size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
                                  t.accumulate(bn, gb);
                              }
                          },
                          "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape, b.shape))
        throw DimensionError("mul: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tape* tape = detail::joint_tape(a, b);
    std::vector<double> out(a.numel());
    const auto &av = a.values(), &bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    int an = a.node, bn = b.node;
    auto ad = a.data, bd = b.data;
    return detail::finish(tape, a.shape, std::move(out), {an, bn},
                          [an, bn, ad, bd](const std::vector<double>& g, Tape& t) {
                              if (an >= 0) {
                                  std::vector<double> ga(g.size());
                                  for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (*bd)[i];
                                  t.accumulate(an, ga);
                              }
                              if (bn >= 0) {
                                  std::vector<double> gb(g.size());
                                  for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * (*ad)[i];
                                  t.accumulate(bn, gb);
                              }
                          },
                          "mul");
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    int an = a.node;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an, c](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(g.size());
                              for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
                              t.accumulate(an, ga);
                          },
                          "scale");
}

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    int an = a.node;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an](const std::vector<double>& g, Tape& t) {
                              if (an >= 0) t.accumulate(an, g);
                          },
                          "add_const");
}

// z = ca*a + cb*b, shape-equal operands. Used for LIF membrane updates and
// block residual combinations so each combine is a single node.
inline Tensor lincomb(double ca, const Tensor& a, double cb, const Tensor& b) {
    if (!same_shape(a.shape, b.shape))
        throw DimensionError("lincomb: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tape* tape = detail::joint_tape(a, b);
    std::vector<double> out(a.numel());
    const auto &av = a.values(), &bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ca * av[i] + cb * bv[i];
    int an = a.node, bn = b.node;
    return detail::finish(tape, a.shape, std::move(out), {an, bn},
                          [an, bn, ca, cb](const std::vector<double>& g, Tape& t) {
                              std::vector<double> tmp(g.size());
                              if (an >= 0) {
                                  for (size_t i = 0; i < g.size(); ++i) tmp[i] = ca * g[i];
                                  t.accumulate(an, tmp);
                              }
                              if (bn >= 0) {
                                  for (size_t i = 0; i < g.size(); ++i) tmp[i] = cb * g[i];
                                  t.accumulate(bn, tmp);
                              }
                          },
                          "lincomb");
}

inline Tensor lincomb3(double ca, const Tensor& a, double cb, const Tensor& b, double cc, const Tensor& c) {
    return add(lincomb(ca, a, cb, b), scale(c, cc));
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    int an = a.node;
    auto ad = a.data;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an, ad](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(g.size());
                              for (size_t i = 0; i < g.size(); ++i) ga[i] = (*ad)[i] > 0.0 ? g[i] : 0.0;
                              t.accumulate(an, ga);
                          },
                          "relu");
}

inline Tensor elu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : std::expm1(av[i]);
    int an = a.node;
    auto ad = a.data;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an, ad](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(g.size());
                              for (size_t i = 0; i < g.size(); ++i)
                                  ga[i] = (*ad)[i] > 0.0 ? g[i] : g[i] * std::exp((*ad)[i]);
                              t.accumulate(an, ga);
                          },
                          "elu");
}

// Theta(x >= 0), closed threshold. Default backward contributes nothing; the
// spiking layer registers the surrogate rule on the returned node.
inline Tensor heaviside_ge(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] >= 0.0 ? 1.0 : 0.0;
    int an = a.node;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [](const std::vector<double>&, Tape&) {}, "heaviside");
}

// Smooth spike primitive g(x) = atan((pi/2)*alpha*x)/pi + 1/2, whose exact
// derivative is the arctan surrogate alpha / (2*(1+((pi/2)*alpha*x)^2)).
inline Tensor smooth_spike(const Tensor& a, double alpha) {
    const double c = M_PI_2 * alpha;
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::atan(c * av[i]) / M_PI + 0.5;
    int an = a.node;
    auto ad = a.data;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an, ad, alpha, c](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(g.size());
                              for (size_t i = 0; i < g.size(); ++i) {
                                  double u = c * (*ad)[i];
                                  ga[i] = g[i] * alpha / (2.0 * (1.0 + u * u));
                              }
                              t.accumulate(an, ga);
                          },
                          "smooth_spike");
}

// ---------------------------------------------------------------------------
// structural ops

inline Tensor reshape(const Tensor& a, Shape s) {
    if (::spikeattn::numel(s) != a.numel())
        throw DimensionError("reshape: " + shape_str(a.shape) + " -> " + shape_str(s) + " changes element count");
    Tensor r = a;
    r.shape = std::move(s);
    if (a.on_tape()) {
        int an = a.node;
        r.node = a.tape->record({an},
                                [an](const std::vector<double>& g, Tape& t) { t.accumulate(an, g); }, r.shape);
    }
    return r;
}

// Swap axes 1 and 2 of a rank-3 tensor.
inline Tensor transpose_12(const Tensor& a) {
    if (a.shape.size() != 3) throw DimensionError("transpose_12 expects rank 3, got " + shape_str(a.shape));
    const int A = a.shape[0], B = a.shape[1], C = a.shape[2];
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < B; ++j)
            for (int k = 0; k < C; ++k) out[(static_cast<int64_t>(i) * C + k) * B + j] = av[(static_cast<int64_t>(i) * B + j) * C + k];
    int an = a.node;
    return detail::finish(a.tape, Shape{A, C, B}, std::move(out), {an},
                          [an, A, B, C](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(g.size());
                              for (int i = 0; i < A; ++i)
                                  for (int k = 0; k < C; ++k)
                                      for (int j = 0; j < B; ++j)
                                          ga[(static_cast<int64_t>(i) * B + j) * C + k] =
                                              g[(static_cast<int64_t>(i) * C + k) * B + j];
                              t.accumulate(an, ga);
                          },
                          "transpose_12");
}

inline Tensor slice_leading(const Tensor& a, int idx) {
    if (a.shape.empty()) throw DimensionError("slice_leading on scalar");
    if (idx < 0 || idx >= a.shape[0]) throw ArgumentError("slice_leading index out of range");
    Shape tail(a.shape.begin() + 1, a.shape.end());
    int64_t block = ::spikeattn::numel(tail);
    std::vector<double> out(a.values().begin() + idx * block, a.values().begin() + (idx + 1) * block);
    int an = a.node;
    int64_t total = a.numel();
    return detail::finish(a.tape, tail, std::move(out), {an},
                          [an, idx, block, total](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(total, 0.0);
                              std::copy(g.begin(), g.end(), ga.begin() + idx * block);
                              t.accumulate(an, ga);
                          },
                          "slice_leading");
}

inline Tensor stack_leading(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("stack_leading: empty list");
    const Shape& tail = parts[0].shape;
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (!same_shape(p.shape, tail)) throw DimensionError("stack_leading: mismatched part shapes");
        if (p.on_tape()) {
            if (tape && tape != p.tape) throw ArgumentError("stack_leading: parts on different tapes");
            tape = p.tape;
        }
    }
    int64_t block = ::spikeattn::numel(tail);
    Shape out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    std::vector<double> out;
    out.reserve(block * parts.size());
    std::vector<int> pn;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        pn.push_back(p.node);
    }
    return detail::finish(tape, out_shape, std::move(out), pn,
                          [pn, block](const std::vector<double>& g, Tape& t) {
                              for (size_t i = 0; i < pn.size(); ++i) {
                                  if (pn[i] < 0) continue;
                                  std::vector<double> gi(g.begin() + i * block, g.begin() + (i + 1) * block);
                                  t.accumulate(pn[i], gi);
                              }
                          },
                          "stack_leading");
}

// Direct-encoding primitive: replicate along a new leading axis. Backward
// sums over the replicas.
inline Tensor repeat_leading(const Tensor& a, int n) {
    if (n < 1) throw ArgumentError("repeat_leading: factor must be >= 1, got " + std::to_string(n));
    int64_t block = a.numel();
    std::vector<double> out;
    out.reserve(block * n);
    for (int i = 0; i < n; ++i) out.insert(out.end(), a.values().begin(), a.values().end());
    Shape s;
    s.push_back(n);
    s.insert(s.end(), a.shape.begin(), a.shape.end());
    int an = a.node;
    return detail::finish(a.tape, s, std::move(out), {an},
                          [an, n, block](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(block, 0.0);
                              for (int i = 0; i < n; ++i)
                                  for (int64_t j = 0; j < block; ++j) ga[j] += g[i * block + j];
                              t.accumulate(an, ga);
                          },
                          "repeat_leading");
}

// Contiguous slice along the last axis.
inline Tensor slice_last(const Tensor& a, int start, int len) {
    if (a.shape.empty()) throw DimensionError("slice_last on scalar");
    const int C = a.shape.back();
    if (start < 0 || len < 1 || start + len > C) throw ArgumentError("slice_last: range out of bounds");
    const int64_t rows = a.numel() / C;
    std::vector<double> out(rows * len);
    const auto& av = a.values();
    for (int64_t r = 0; r < rows; ++r)
        std::copy(av.begin() + r * C + start, av.begin() + r * C + start + len, out.begin() + r * len);
    Shape s = a.shape;
    s.back() = len;
    int an = a.node;
    return detail::finish(a.tape, s, std::move(out), {an},
                          [an, rows, C, start, len](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(rows * C, 0.0);
                              for (int64_t r = 0; r < rows; ++r)
                                  std::copy(g.begin() + r * len, g.begin() + (r + 1) * len,
                                            ga.begin() + r * C + start);
                              t.accumulate(an, ga);
                          },
                          "slice_last");
}

inline Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_last: empty list");
    Shape head = parts[0].shape;
    head.pop_back();
    Tape* tape = nullptr;
    int total = 0;
    std::vector<int> widths, pn;
    for (const auto& p : parts) {
        Shape h = p.shape;
        int w = h.back();
        h.pop_back();
        if (h != head) throw DimensionError("concat_last: mismatched leading shapes");
        widths.push_back(w);
        pn.push_back(p.node);
        total += w;
        if (p.on_tape()) {
            if (tape && tape != p.tape) throw ArgumentError("concat_last: parts on different tapes");
            tape = p.tape;
        }
    }
    const int64_t rows = ::spikeattn::numel(head);
    std::vector<double> out(rows * total);
    int off = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
        const auto& pv = parts[i].values();
        for (int64_t r = 0; r < rows; ++r)
            std::copy(pv.begin() + r * widths[i], pv.begin() + (r + 1) * widths[i],
                      out.begin() + r * total + off);
        off += widths[i];
    }
    Shape s = head;
    s.push_back(total);
    return detail::finish(tape, s, std::move(out), pn,
                          [pn, widths, rows, total](const std::vector<double>& g, Tape& t) {
                              int off2 = 0;
                              for (size_t i = 0; i < pn.size(); ++i) {
                                  if (pn[i] >= 0) {
                                      std::vector<double> gi(rows * widths[i]);
                                      for (int64_t r = 0; r < rows; ++r)
                                          std::copy(g.begin() + r * total + off2,
                                                    g.begin() + r * total + off2 + widths[i],
                                                    gi.begin() + r * widths[i]);
                                      t.accumulate(pn[i], gi);
                                  }
                                  off2 += widths[i];
                              }
                          },
                          "concat_last");
}

// Sums a [Co,Ci,3,kh,kw] kernel over its two temporally adjacent slices
// (kt = 0 and 2) and all spatial taps, producing the [Co,Ci,1,1,1] kernel of
// the temporal-difference term. Linear in w, so backward scatters uniformly.
inline Tensor kernel_temporal_sum(const Tensor& w) {
    if (w.shape.size() != 5 || w.shape[2] != 3)
        throw ArgumentError("kernel_temporal_sum: expected [Co,Ci,3,kh,kw], got " + shape_str(w.shape));
    const int Co = w.shape[0], Ci = w.shape[1], kh = w.shape[3], kw = w.shape[4];
    const int64_t khw = static_cast<int64_t>(kh) * kw;
    std::vector<double> out(static_cast<int64_t>(Co) * Ci, 0.0);
    const auto& wv = w.values();
    for (int64_t oc = 0; oc < static_cast<int64_t>(Co) * Ci; ++oc)
        for (int kt = 0; kt < 3; kt += 2)
            for (int64_t i = 0; i < khw; ++i) out[oc] += wv[(oc * 3 + kt) * khw + i];
    int wn = w.node;
    return detail::finish(w.tape, Shape{Co, Ci, 1, 1, 1}, std::move(out), {wn},
                          [wn, Co, Ci, khw](const std::vector<double>& g, Tape& t) {
                              if (wn < 0) return;
                              std::vector<double> gw(static_cast<int64_t>(Co) * Ci * 3 * khw, 0.0);
                              for (int64_t oc = 0; oc < static_cast<int64_t>(Co) * Ci; ++oc)
                                  for (int kt = 0; kt < 3; kt += 2)
                                      for (int64_t i = 0; i < khw; ++i) gw[(oc * 3 + kt) * khw + i] = g[oc];
                              t.accumulate(wn, gw);
                          },
                          "kernel_temporal_sum");
}

// y = x + b[0] with a learnable scalar b.
inline Tensor add_scalar_t(const Tensor& x, const Tensor& b) {
    if (b.numel() != 1) throw DimensionError("add_scalar_t: bias must be a scalar tensor");
    Tape* tape = detail::joint_tape(x, b);
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    const double bv = b.values()[0];
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv;
    int xn = x.node, bn = b.node;
    return detail::finish(tape, x.shape, std::move(out), {xn, bn},
                          [xn, bn](const std::vector<double>& g, Tape& t) {
                              if (xn >= 0) t.accumulate(xn, g);
                              if (bn >= 0) {
                                  double s = 0.0;
                                  for (double v : g) s += v;
                                  t.accumulate(bn, {s});
                              }
                          },
                          "add_scalar_t");
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum_axis(const Tensor& a, int axis) {
    if (axis < 0 || axis >= static_cast<int>(a.shape.size())) throw ArgumentError("sum_axis: bad axis");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.shape[i];
    for (size_t i = axis + 1; i < a.shape.size(); ++i) inner *= a.shape[i];
    int n = a.shape[axis];
    Shape s = a.shape;
    s.erase(s.begin() + axis);
    if (s.empty()) s.push_back(1);
    std::vector<double> out(outer * inner, 0.0);
    const auto& av = a.values();
    for (int64_t o = 0; o < outer; ++o)
        for (int k = 0; k < n; ++k)
            for (int64_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * n + k) * inner + i];
    int an = a.node;
    return detail::finish(a.tape, s, std::move(out), {an},
                          [an, outer, inner, n](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              std::vector<double> ga(outer * n * inner);
                              for (int64_t o = 0; o < outer; ++o)
                                  for (int k = 0; k < n; ++k)
                                      for (int64_t i = 0; i < inner; ++i)
                                          ga[(o * n + k) * inner + i] = g[o * inner + i];
                              t.accumulate(an, ga);
                          },
                          "sum_axis");
}

inline Tensor mean_axis(const Tensor& a, int axis) { return scale(sum_axis(a, axis), 1.0 / a.shape[axis]); }

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    int an = a.node;
    int64_t n = a.numel();
    return detail::finish(a.tape, Shape{1}, {s}, {an},
                          [an, n](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              t.accumulate(an, std::vector<double>(n, g[0]));
                          },
                          "sum_all");
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.numel()); }

// x - mean(x); backward is g - mean(g).
inline Tensor center(const Tensor& a) {
    double m = 0.0;
    for (double v : a.values()) m += v;
    m /= a.numel();
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - m;
    int an = a.node;
    return detail::finish(a.tape, a.shape, std::move(out), {an},
                          [an](const std::vector<double>& g, Tape& t) {
                              if (an < 0) return;
                              double gm = 0.0;
                              for (double v : g) gm += v;
                              gm /= g.size();
                              std::vector<double> ga(g.size());
                              for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] - gm;
                              t.accumulate(an, ga);
                          },
                          "center");
}

// ---------------------------------------------------------------------------
// convolutions, pooling, upsampling, batchnorm

inline Tensor conv3d(const Tensor& x, const Tensor& w, std::array<int, 3> stride = {1, 1, 1},
                     std::array<int, 3> pad = {0, 0, 0}) {
    if (x.shape.size() != 4) throw DimensionError("conv3d: input must be [C,T,H,W], got " + shape_str(x.shape));
    if (w.shape.size() != 5) throw DimensionError("conv3d: weight must be [Co,Ci,kt,kh,kw], got " + shape_str(w.shape));
    const int Ci = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int Co = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4];
    if (w.shape[1] != Ci)
        throw DimensionError("conv3d: channel axis mismatch, input C=" + std::to_string(Ci) +
                             " weight Ci=" + std::to_string(w.shape[1]));
    for (int s : stride)
        if (s < 1) throw ArgumentError("conv3d: stride must be >= 1");
    const int Tp = T + 2 * pad[0], Hp = H + 2 * pad[1], Wp = W + 2 * pad[2];
    if (kt > Tp) throw DimensionError("conv3d: kernel exceeds padded input on axis T");
    if (kh > Hp) throw DimensionError("conv3d: kernel exceeds padded input on axis H");
    if (kw > Wp) throw DimensionError("conv3d: kernel exceeds padded input on axis W");
    const int To = (Tp - kt) / stride[0] + 1, Ho = (Hp - kh) / stride[1] + 1, Wo = (Wp - kw) / stride[2] + 1;

    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<double> out(static_cast<int64_t>(Co) * To * Ho * Wo, 0.0);
    auto xat = [&](int c, int t, int h, int ww) { return xv[((static_cast<int64_t>(c) * T + t) * H + h) * W + ww]; };
    for (int co = 0; co < Co; ++co)
        for (int to = 0; to < To; ++to)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    const int t0 = to * stride[0] - pad[0], h0 = ho * stride[1] - pad[1], w0 = wo * stride[2] - pad[2];
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int a = 0; a < kt; ++a) {
                            int t = t0 + a;
                            if (t < 0 || t >= T) continue;
                            for (int b = 0; b < kh; ++b) {
                                int h = h0 + b;
                                if (h < 0 || h >= H) continue;
                                for (int c = 0; c < kw; ++c) {
                                    int ww_ = w0 + c;
                                    if (ww_ < 0 || ww_ >= W) continue;
                                    acc += xat(ci, t, h, ww_) *
                                           wv[(((static_cast<int64_t>(co) * Ci + ci) * kt + a) * kh + b) * kw + c];
                                }
                            }
                        }
                    out[((static_cast<int64_t>(co) * To + to) * Ho + ho) * Wo + wo] = acc;
                }

    Tape* tape = detail::joint_tape(x, w);
    int xn = x.node, wn = w.node;
    auto xd = x.data, wd = w.data;
    Shape xs = x.shape, ws = w.shape;
    return detail::finish(
        tape, Shape{Co, To, Ho, Wo}, std::move(out), {xn, wn},
        [=](const std::vector<double>& g, Tape& t) {
            std::vector<double> gx, gw;
            if (xn >= 0) gx.assign(static_cast<int64_t>(Ci) * T * H * W, 0.0);
            if (wn >= 0) gw.assign(static_cast<int64_t>(Co) * Ci * kt * kh * kw, 0.0);
            const auto& xv2 = *xd;
            const auto& wv2 = *wd;
            for (int co = 0; co < Co; ++co)
                for (int to = 0; to < To; ++to)
                    for (int ho = 0; ho < Ho; ++ho)
                        for (int wo = 0; wo < Wo; ++wo) {
                            double go = g[((static_cast<int64_t>(co) * To + to) * Ho + ho) * Wo + wo];
                            if (go == 0.0) continue;
                            const int t0 = to * stride[0] - pad[0], h0 = ho * stride[1] - pad[1],
                                      w0 = wo * stride[2] - pad[2];
                            for (int ci = 0; ci < Ci; ++ci)
                                for (int a = 0; a < kt; ++a) {
                                    int tt = t0 + a;
                                    if (tt < 0 || tt >= T) continue;
                                    for (int b = 0; b < kh; ++b) {
                                        int h = h0 + b;
                                        if (h < 0 || h >= H) continue;
                                        for (int c = 0; c < kw; ++c) {
                                            int ww_ = w0 + c;
                                            if (ww_ < 0 || ww_ >= W) continue;
                                            int64_t xi = ((static_cast<int64_t>(ci) * T + tt) * H + h) * W + ww_;
                                            int64_t wi = (((static_cast<int64_t>(co) * Ci + ci) * kt + a) * kh + b) * kw + c;
                                            if (xn >= 0) gx[xi] += go * wv2[wi];
                                            if (wn >= 0) gw[wi] += go * xv2[xi];
                                        }
                                    }
                                }
                        }
            if (xn >= 0) t.accumulate(xn, gx);
            if (wn >= 0) t.accumulate(wn, gw);
        },
        "conv3d");
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, std::array<int, 2> stride = {1, 1},
                     std::array<int, 2> pad = {0, 0}) {
    if (x.shape.size() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(x.shape));
    if (w.shape.size() != 4) throw DimensionError("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(w.shape));
    // Reuse conv3d with a unit temporal axis.
    Tensor x3 = reshape(x, Shape{x.shape[0], 1, x.shape[1], x.shape[2]});
    Tensor w3 = reshape(w, Shape{w.shape[0], w.shape[1], 1, w.shape[2], w.shape[3]});
    Tensor y = conv3d(x3, w3, {1, stride[0], stride[1]}, {0, pad[0], pad[1]});
    return reshape(y, Shape{y.shape[0], y.shape[2], y.shape[3]});
}

inline Tensor maxpool3d(const Tensor& x, std::array<int, 3> window, std::array<int, 3> stride) {
    if (x.shape.size() != 4) throw DimensionError("maxpool3d: input must be [C,T,H,W], got " + shape_str(x.shape));
    const int C = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (window[0] > T || window[1] > H || window[2] > W)
        throw DimensionError("maxpool3d: window larger than input " + shape_str(x.shape));
    for (int s : stride)
        if (s < 1) throw ArgumentError("maxpool3d: stride must be >= 1");
    const int To = (T - window[0]) / stride[0] + 1, Ho = (H - window[1]) / stride[1] + 1,
              Wo = (W - window[2]) / stride[2] + 1;
    std::vector<double> out(static_cast<int64_t>(C) * To * Ho * Wo);
    auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
    const auto& xv = x.values();
    for (int c = 0; c < C; ++c)
        for (int to = 0; to < To; ++to)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_i = -1;
                    for (int a = 0; a < window[0]; ++a)
                        for (int b = 0; b < window[1]; ++b)
                            for (int d = 0; d < window[2]; ++d) {
                                int64_t xi = ((static_cast<int64_t>(c) * T + to * stride[0] + a) * H + ho * stride[1] + b) * W +
                                             wo * stride[2] + d;
                                if (xv[xi] > best) {  // strict '>' keeps the first (lowest index) max on ties
                                    best = xv[xi];
                                    best_i = xi;
                                }
                            }
                    int64_t oi = ((static_cast<int64_t>(c) * To + to) * Ho + ho) * Wo + wo;
                    out[oi] = best;
                    (*argmax)[oi] = best_i;
                }
    int xn = x.node;
    int64_t in_n = x.numel();
    return detail::finish(x.tape, Shape{C, To, Ho, Wo}, std::move(out), {xn},
                          [xn, argmax, in_n](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              std::vector<double> gx(in_n, 0.0);
                              for (size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
                              t.accumulate(xn, gx);
                          },
                          "maxpool3d");
}

// Nearest-neighbor replication along the temporal axis of [C,T,H,W].
inline Tensor upsample_time(const Tensor& x, int factor) {
    if (factor < 1) throw ArgumentError("upsample_time: factor must be >= 1, got " + std::to_string(factor));
    if (x.shape.size() != 4) throw DimensionError("upsample_time: input must be [C,T,H,W], got " + shape_str(x.shape));
    const int C = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<double> out(static_cast<int64_t>(C) * T * factor * hw);
    const auto& xv = x.values();
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < factor; ++f)
                std::copy(xv.begin() + (static_cast<int64_t>(c) * T + t) * hw,
                          xv.begin() + (static_cast<int64_t>(c) * T + t + 1) * hw,
                          out.begin() + (static_cast<int64_t>(c) * T * factor + t * factor + f) * hw);
    int xn = x.node;
    return detail::finish(x.tape, Shape{C, T * factor, H, W}, std::move(out), {xn},
                          [xn, C, T, factor, hw](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              std::vector<double> gx(static_cast<int64_t>(C) * T * hw, 0.0);
                              for (int c = 0; c < C; ++c)
                                  for (int tt = 0; tt < T; ++tt)
                                      for (int f = 0; f < factor; ++f)
                                          for (int64_t i = 0; i < hw; ++i)
                                              gx[(static_cast<int64_t>(c) * T + tt) * hw + i] +=
                                                  g[(static_cast<int64_t>(c) * T * factor + tt * factor + f) * hw + i];
                              t.accumulate(xn, gx);
                          },
                          "upsample_time");
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// BatchNorm over all axes except channel_axis. Train mode uses population
// (biased) batch variance and updates running stats with momentum 0.1; eval
// mode uses running stats and requires at least one recorded update.
inline Tensor batchnorm(const Tensor& x, int channel_axis, const Tensor& gamma, const Tensor& beta,
                        BnStats& stats, BnMode mode) {
    if (channel_axis < 0 || channel_axis >= static_cast<int>(x.shape.size()))
        throw ArgumentError("batchnorm: bad channel axis");
    const int C = x.shape[channel_axis];
    if (gamma.numel() != C || beta.numel() != C)
        throw DimensionError("batchnorm: gamma/beta length " + std::to_string(gamma.numel()) + "/" +
                             std::to_string(beta.numel()) + " must equal channel size " + std::to_string(C) +
                             " of " + shape_str(x.shape) + " axis " + std::to_string(channel_axis));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < channel_axis; ++i) outer *= x.shape[i];
    for (size_t i = channel_axis + 1; i < x.shape.size(); ++i) inner *= x.shape[i];
    const int64_t per_channel = outer * inner;

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    const auto& xv = x.values();
    auto idx = [C, inner](int64_t o, int c, int64_t i) { return (o * C + c) * inner + i; };
    if (mode == BnMode::Train) {
        for (int c = 0; c < C; ++c) {
            double m = 0.0;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) m += xv[idx(o, c, i)];
            m /= per_channel;
            double v = 0.0;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    double d = xv[idx(o, c, i)] - m;
                    v += d * d;
                }
            v /= per_channel;
            mean[c] = m;
            var[c] = v;
        }
        if (stats.mean.empty()) {
            stats.mean.assign(C, 0.0);
            stats.var.assign(C, 0.0);
        }
        // running stats are persisted as f32; keep them f32-representable so
        // checkpoints round-trip bit-exactly
        for (int c = 0; c < C; ++c) {
            stats.mean[c] = static_cast<double>(
                static_cast<float>((1.0 - kBnMomentum) * stats.mean[c] + kBnMomentum * mean[c]));
            stats.var[c] = static_cast<double>(
                static_cast<float>((1.0 - kBnMomentum) * stats.var[c] + kBnMomentum * var[c]));
        }
        stats.batches++;
    } else {
        if (stats.batches == 0) throw StatsError("batchnorm eval mode before any statistics were recorded");
        mean = stats.mean;
        var = stats.var;
    }

    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<double> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEps);
    std::vector<double> out(x.numel());
    for (int64_t o = 0; o < outer; ++o)
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < inner; ++i) {
                int64_t k = idx(o, c, i);
                out[k] = gv[c] * (xv[k] - mean[c]) * inv_std[c] + bv[c];
            }

    Tape* tape = detail::joint_tape(x, gamma);
    if (!tape) tape = beta.tape;
    int xn = x.node, gn = gamma.node, bn = beta.node;
    auto xd = x.data;
    auto mean_p = std::make_shared<std::vector<double>>(std::move(mean));
    auto istd_p = std::make_shared<std::vector<double>>(std::move(inv_std));
    auto gd = gamma.data;
    bool train = (mode == BnMode::Train);
    return detail::finish(
        tape, x.shape, std::move(out), {xn, gn, bn},
        [=](const std::vector<double>& g, Tape& t) {
            const auto& x2 = *xd;
            const auto& gm = *gd;
            std::vector<double> gx, gg, gb;
            if (xn >= 0) gx.assign(x2.size(), 0.0);
            if (gn >= 0) gg.assign(C, 0.0);
            if (bn >= 0) gb.assign(C, 0.0);
            for (int c = 0; c < C; ++c) {
                const double m = (*mean_p)[c], is = (*istd_p)[c];
                double sum_g = 0.0, sum_gx = 0.0;  // sums of grad and grad*xhat
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < inner; ++i) {
                        int64_t k = idx(o, c, i);
                        double xh = (x2[k] - m) * is;
                        sum_g += g[k];
                        sum_gx += g[k] * xh;
                    }
                if (gn >= 0) gg[c] = sum_gx;
                if (bn >= 0) gb[c] = sum_g;
                if (xn >= 0) {
                    if (train) {
                        const double inv_n = 1.0 / static_cast<double>(per_channel);
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t i = 0; i < inner; ++i) {
                                int64_t k = idx(o, c, i);
                                double xh = (x2[k] - m) * is;
                                gx[k] = gm[c] * is * (g[k] - inv_n * sum_g - xh * inv_n * sum_gx);
                            }
                    } else {
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t i = 0; i < inner; ++i) {
                                int64_t k = idx(o, c, i);
                                gx[k] = gm[c] * is * g[k];
                            }
                    }
                }
            }
            if (xn >= 0) t.accumulate(xn, gx);
            if (gn >= 0) t.accumulate(gn, gg);
            if (bn >= 0) t.accumulate(bn, gb);
        },
        "batchnorm");
}

// ---------------------------------------------------------------------------
// token-wise linear and gating

// x: [..., in], w: [out, in] -> [..., out]
inline Tensor linear_tokens(const Tensor& x, const Tensor& w) {
    if (x.shape.empty() || w.shape.size() != 2) throw DimensionError("linear_tokens: need x [...,in], w [out,in]");
    const int in = x.shape.back(), out_c = w.shape[0];
    if (w.shape[1] != in)
        throw DimensionError("linear_tokens: feature axis mismatch " + std::to_string(in) + " vs " +
                             std::to_string(w.shape[1]));
    const int64_t rows = x.numel() / in;
    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<double> out(rows * out_c, 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int o = 0; o < out_c; ++o) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i) acc += xv[r * in + i] * wv[static_cast<int64_t>(o) * in + i];
            out[r * out_c + o] = acc;
        }
    Shape s = x.shape;
    s.back() = out_c;
    Tape* tape = detail::joint_tape(x, w);
    int xn = x.node, wn = w.node;
    auto xd = x.data, wd = w.data;
    return detail::finish(tape, s, std::move(out), {xn, wn},
                          [=](const std::vector<double>& g, Tape& t) {
                              const auto& x2 = *xd;
                              const auto& w2 = *wd;
                              if (xn >= 0) {
                                  std::vector<double> gx(rows * in, 0.0);
                                  for (int64_t r = 0; r < rows; ++r)
                                      for (int o = 0; o < out_c; ++o) {
                                          double go = g[r * out_c + o];
                                          if (go == 0.0) continue;
                                          for (int i = 0; i < in; ++i)
                                              gx[r * in + i] += go * w2[static_cast<int64_t>(o) * in + i];
                                      }
                                  t.accumulate(xn, gx);
                              }
                              if (wn >= 0) {
                                  std::vector<double> gw(static_cast<int64_t>(out_c) * in, 0.0);
                                  for (int64_t r = 0; r < rows; ++r)
                                      for (int o = 0; o < out_c; ++o) {
                                          double go = g[r * out_c + o];
                                          if (go == 0.0) continue;
                                          for (int i = 0; i < in; ++i)
                                              gw[static_cast<int64_t>(o) * in + i] += go * x2[r * in + i];
                                      }
                                  t.accumulate(wn, gw);
                              }
                          },
                          "linear_tokens");
}

// v: [A,N,C] gated per (A,C) by g: [A,C], broadcast over the token axis N.
inline Tensor mul_gate(const Tensor& v, const Tensor& g) {
    if (v.shape.size() != 3 || g.shape.size() != 2 || v.shape[0] != g.shape[0] || v.shape[2] != g.shape[1])
        throw DimensionError("mul_gate: v " + shape_str(v.shape) + " vs gate " + shape_str(g.shape));
    const int A = v.shape[0], N = v.shape[1], C = v.shape[2];
    const auto& vv = v.values();
    const auto& gv = g.values();
    std::vector<double> out(v.numel());
    for (int a = 0; a < A; ++a)
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                out[(static_cast<int64_t>(a) * N + n) * C + c] =
                    vv[(static_cast<int64_t>(a) * N + n) * C + c] * gv[a * C + c];
    Tape* tape = detail::joint_tape(v, g);
    int vn = v.node, gn = g.node;
    auto vd = v.data, gd = g.data;
    return detail::finish(tape, v.shape, std::move(out), {vn, gn},
                          [=](const std::vector<double>& gr, Tape& t) {
                              if (vn >= 0) {
                                  std::vector<double> gv2(gr.size());
                                  for (int a = 0; a < A; ++a)
                                      for (int n = 0; n < N; ++n)
                                          for (int c = 0; c < C; ++c)
                                              gv2[(static_cast<int64_t>(a) * N + n) * C + c] =
                                                  gr[(static_cast<int64_t>(a) * N + n) * C + c] * (*gd)[a * C + c];
                                  t.accumulate(vn, gv2);
                              }
                              if (gn >= 0) {
                                  std::vector<double> gg(static_cast<int64_t>(A) * C, 0.0);
                                  for (int a = 0; a < A; ++a)
                                      for (int n = 0; n < N; ++n)
                                          for (int c = 0; c < C; ++c)
                                              gg[a * C + c] += gr[(static_cast<int64_t>(a) * N + n) * C + c] *
                                                               (*vd)[(static_cast<int64_t>(a) * N + n) * C + c];
                                  t.accumulate(gn, gg);
                              }
                          },
                          "mul_gate");
}

// ---------------------------------------------------------------------------
// loss building blocks

// Pearson correlation of two equal-length vectors, analytic gradient.
inline Tensor pearson(const Tensor& x, const Tensor& y) {
    if (x.numel() != y.numel() || x.numel() < 2)
        throw DimensionError("pearson: need two equal-length vectors of length >= 2");
    const int64_t n = x.numel();
    const auto& xv = x.values();
    const auto& yv = y.values();
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        mx += xv[i];
        my += yv[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double a = xv[i] - mx, b = yv[i] - my;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw SignalError("pearson: degenerate (constant) signal");
    const double denom = std::sqrt(sxx * syy);
    const double rho = sxy / denom;
    Tape* tape = detail::joint_tape(x, y);
    int xn = x.node, yn = y.node;
    auto xd = x.data, yd = y.data;
    return detail::finish(tape, Shape{1}, {rho}, {xn, yn},
                          [=](const std::vector<double>& g, Tape& t) {
                              const double go = g[0];
                              const auto& x2 = *xd;
                              const auto& y2 = *yd;
                              if (xn >= 0) {
                                  std::vector<double> gx(n);
                                  for (int64_t i = 0; i < n; ++i) {
                                      double a = x2[i] - mx, b = y2[i] - my;
                                      gx[i] = go * (b / denom - rho * a / sxx);
                                  }
                                  t.accumulate(xn, gx);
                              }
                              if (yn >= 0) {
                                  std::vector<double> gy(n);
                                  for (int64_t i = 0; i < n; ++i) {
                                      double a = x2[i] - mx, b = y2[i] - my;
                                      gy[i] = go * (a / denom - rho * b / syy);
                                  }
                                  t.accumulate(yn, gy);
                              }
                          },
                          "pearson");
}

// DTFT power of a (already centered) signal at exact 1-bpm bins
// [bpm_lo, bpm_hi]. p_b = (sumx cos)^2 + (sum x sin)^2.
inline Tensor bpm_power(const Tensor& x, double fps, int bpm_lo, int bpm_hi) {
    if (x.numel() < 2) throw ArgumentError("bpm_power: signal too short");
    const int64_t n = x.numel();
    const int bins = bpm_hi - bpm_lo + 1;
    const auto& xv = x.values();
    auto cos_t = std::make_shared<std::vector<double>>(static_cast<int64_t>(bins) * n);
    auto sin_t = std::make_shared<std::vector<double>>(static_cast<int64_t>(bins) * n);
    std::vector<double> cb(bins, 0.0), sb(bins, 0.0), out(bins);
    for (int b = 0; b < bins; ++b) {
        const double w = 2.0 * M_PI * (bpm_lo + b) / 60.0 / fps;
        double c = 0.0, s = 0.0;
        for (int64_t t = 0; t < n; ++t) {
            double ct = std::cos(w * t), st = std::sin(w * t);
            (*cos_t)[b * n + t] = ct;
            (*sin_t)[b * n + t] = st;
            c += xv[t] * ct;
            s += xv[t] * st;
        }
        cb[b] = c;
        sb[b] = s;
        out[b] = c * c + s * s;
    }
    int xn = x.node;
    auto cb_p = std::make_shared<std::vector<double>>(std::move(cb));
    auto sb_p = std::make_shared<std::vector<double>>(std::move(sb));
    return detail::finish(x.tape, Shape{bins}, std::move(out), {xn},
                          [=](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              std::vector<double> gx(n, 0.0);
                              for (int b = 0; b < bins; ++b) {
                                  const double gc = 2.0 * g[b] * (*cb_p)[b], gs = 2.0 * g[b] * (*sb_p)[b];
                                  if (gc == 0.0 && gs == 0.0) continue;
                                  for (int64_t tt = 0; tt < n; ++tt)
                                      gx[tt] += gc * (*cos_t)[b * n + tt] + gs * (*sin_t)[b * n + tt];
                              }
                              t.accumulate(xn, gx);
                          },
                          "bpm_power");
}

inline Tensor normalize_sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    if (s <= 0.0) throw SignalError("normalize_sum: non-positive total");
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / s;
    int xn = x.node;
    auto xd = x.data;
    return detail::finish(x.tape, x.shape, std::move(out), {xn},
                          [xn, xd, s](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              double dot = 0.0;
                              for (size_t i = 0; i < g.size(); ++i) dot += g[i] * (*xd)[i];
                              std::vector<double> gx(g.size());
                              for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] / s - dot / (s * s);
                              t.accumulate(xn, gx);
                          },
                          "normalize_sum");
}

inline Tensor log_softmax(const Tensor& x) {
    const auto& xv = x.values();
    double mx = *std::max_element(xv.begin(), xv.end());
    double lse = 0.0;
    for (double v : xv) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] - lse;
    int xn = x.node;
    auto out_p = std::make_shared<std::vector<double>>(out);
    return detail::finish(x.tape, x.shape, std::move(out), {xn},
                          [xn, out_p](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              double gsum = 0.0;
                              for (double v : g) gsum += v;
                              std::vector<double> gx(g.size());
                              for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] - std::exp((*out_p)[i]) * gsum;
                              t.accumulate(xn, gx);
                          },
                          "log_softmax");
}

inline Tensor gather_scalar(const Tensor& x, int idx) {
    if (idx < 0 || idx >= x.numel()) throw ArgumentError("gather_scalar: index out of range");
    int xn = x.node;
    int64_t n = x.numel();
    return detail::finish(x.tape, Shape{1}, {x.values()[idx]}, {xn},
                          [xn, idx, n](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              std::vector<double> gx(n, 0.0);
                              gx[idx] = g[0];
                              t.accumulate(xn, gx);
                          },
                          "gather_scalar");
}

inline Tensor dot_const(const Tensor& x, const std::vector<double>& c) {
    if (static_cast<int64_t>(c.size()) != x.numel()) throw DimensionError("dot_const: length mismatch");
    double s = 0.0;
    const auto& xv = x.values();
    for (size_t i = 0; i < c.size(); ++i) s += xv[i] * c[i];
    int xn = x.node;
    auto cp = std::make_shared<std::vector<double>>(c);
    return detail::finish(x.tape, Shape{1}, {s}, {xn},
                          [xn, cp](const std::vector<double>& g, Tape& t) {
                              if (xn < 0) return;
                              std::vector<double> gx(cp->size());
                              for (size_t i = 0; i < cp->size(); ++i) gx[i] = g[0] * (*cp)[i];
                              t.accumulate(xn, gx);
                          },
                          "dot_const");
}

}  // namespace spikeattn
