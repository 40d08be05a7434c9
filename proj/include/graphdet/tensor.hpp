#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "graphdet/common.hpp"

namespace graphdet {

template <typename T>
class Tape;

// Dense row-major tensor. Rank is kept general for serialization, but every
// arithmetic op below works on the rank-2 view (scalars are [1,1]).
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    Tape<T>* tape = nullptr;
    std::int64_t node = -1;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size()) throw ShapeError("Tensor: shape/data size mismatch");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::size_t r, std::size_t c) {
        return Tensor({r, c}, std::vector<T>(r * c, T(0)));
    }
    static Tensor full(std::size_t r, std::size_t c, T v) {
        return Tensor({r, c}, std::vector<T>(r * c, v));
    }
    static Tensor scalar(T v) { return Tensor({1, 1}, {v}); }
    static Tensor row(std::vector<T> v) {
        std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    bool taped() const { return tape != nullptr && node >= 0; }
    std::size_t size() const { return data.size(); }

    std::size_t rows() const {
        if (shape.size() != 2) throw ShapeError("Tensor: rank-2 access on rank-" + std::to_string(shape.size()));
        return shape[0];
    }
    std::size_t cols() const {
        if (shape.size() != 2) throw ShapeError("Tensor: rank-2 access on rank-" + std::to_string(shape.size()));
        return shape[1];
    }

    T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    // value of a 1-element tensor
    T item() const {
        if (data.size() != 1) throw ShapeError("Tensor::item: size " + std::to_string(data.size()) + " != 1");
        return data[0];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
    os << "]";
    return os.str();
}

// Gradients of one backward pass, indexed by tape node id.
template <typename T>
class Gradients {
public:
    explicit Gradients(std::size_t n) : grads_(n) {}

    bool has(const Tensor<T>& x) const {
        return x.taped() && static_cast<std::size_t>(x.node) < grads_.size() && !grads_[static_cast<std::size_t>(x.node)].empty();
    }

    // dLoss/dx, zeros if x never influenced the loss
    Tensor<T> grad(const Tensor<T>& x) const {
        if (!x.taped()) throw Error("Gradients::grad: tensor is not on a tape");
        Tensor<T> g;
        g.shape = x.shape;
        const auto& v = grads_[static_cast<std::size_t>(x.node)];
        g.data = v.empty() ? std::vector<T>(x.size(), T(0)) : v;
        return g;
    }

    std::vector<std::vector<T>>& raw() { return grads_; }

private:
    std::vector<std::vector<T>> grads_;
};

// Reverse-mode tape. Append-only; parents always precede children, and the
// backward pass walks the node list once in reverse.
template <typename T>
class Tape {
public:
    struct Node {
        std::vector<std::int64_t> parents;
        std::vector<std::size_t> shape;
        std::size_t size = 0;
        // adds this node's contribution to its parents' gradient buffers
        std::function<void(const std::vector<T>& g_out, std::vector<std::vector<T>>& grads)> backward;
    };

    std::int64_t record(std::vector<std::int64_t> parents, std::vector<std::size_t> shape,
                        std::function<void(const std::vector<T>&, std::vector<std::vector<T>>&)> fn) {
        Node n;
        n.parents = std::move(parents);
        n.shape = std::move(shape);
        n.size = Tensor<T>::count(n.shape);
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return static_cast<std::int64_t>(nodes_.size()) - 1;
    }

    // register an input/parameter value so gradients are collected for it
    Tensor<T> leaf(Tensor<T> value) {
        if (value.taped() && value.tape != this) throw Error("Tape::leaf: tensor already owned by another tape");
        value.tape = this;
        value.node = record({}, value.shape, nullptr);
        return value;
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::int64_t i) const { return nodes_[static_cast<std::size_t>(i)]; }

    // Reverse accumulation from a scalar loss. The tape is left intact.
    Gradients<T> backward(const Tensor<T>& loss) const {
        if (!loss.taped() || loss.tape != this) throw Error("backward: loss is not recorded on this tape");
        if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss));
        Gradients<T> out(nodes_.size());
        auto& grads = out.raw();
        grads[static_cast<std::size_t>(loss.node)] = {T(1)};
        for (std::int64_t i = loss.node; i >= 0; --i) {
            const auto idx = static_cast<std::size_t>(i);
            if (grads[idx].empty() || !nodes_[idx].backward) continue;
            nodes_[idx].backward(grads[idx], grads);
        }
        return out;
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
std::vector<T>& grad_buf(std::vector<std::vector<T>>& grads, std::int64_t node, std::size_t n) {
    auto& g = grads[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(n, T(0));
    return g;
}

template <typename T>
Tape<T>* result_tape(std::initializer_list<const Tensor<T>*> args, const char* op) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* a : args) {
        if (!a->taped()) continue;
        if (tape && tape != a->tape)
            throw Error(std::string(op) + ": arguments live on different tapes");
        tape = a->tape;
    }
    return tape;
}

template <typename T>
std::int64_t node_or_minus1(const Tensor<T>& t) {
    return t.taped() ? t.node : -1;
}

template <typename T>
using EigenMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using EigenCMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// How the second operand of an elementwise binary op lines up with the first.
enum class Broadcast { same, scalar, row, col };

template <typename T>
Broadcast broadcast_mode(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape == b.shape) return Broadcast::same;
    if (b.size() == 1) return Broadcast::scalar;
    if (b.shape.size() == 2 && a.shape.size() == 2) {
        if (b.shape[0] == 1 && b.shape[1] == a.shape[1]) return Broadcast::row;
        if (b.shape[1] == 1 && b.shape[0] == a.shape[0]) return Broadcast::col;
    }
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline std::size_t broadcast_index(Broadcast m, std::size_t i, std::size_t cols) {
    switch (m) {
        case Broadcast::same: return i;
        case Broadcast::scalar: return 0;
        case Broadcast::row: return i % cols;
        case Broadcast::col: return i / cols;
    }
    return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* op, FwdFn fwd, BwdFn bwd) {
    const auto mode = detail::broadcast_mode(a, b, op);
    const std::size_t n = a.size();
    const std::size_t c = a.shape.size() == 2 ? a.shape[1] : 1;
    Tensor<T> out;
    out.shape = a.shape;
    out.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = fwd(a.data[i], b.data[detail::broadcast_index(mode, i, c)]);
    }
    Tape<T>* tape = detail::result_tape<T>({&a, &b}, op);
    if (tape) {
        out.tape = tape;
        auto av = a.data, bv = b.data;
        const auto an = detail::node_or_minus1(a), bn = detail::node_or_minus1(b);
        const auto asz = a.size(), bsz = b.size();
        out.node = tape->record({an, bn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            if (an >= 0) {
                auto& ga = detail::grad_buf(grads, an, asz);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const T bval = bv[detail::broadcast_index(mode, i, c)];
                    ga[i] += bwd(g[i], av[i], bval, true);
                }
            }
            if (bn >= 0) {
                auto& gb = detail::grad_buf(grads, bn, bsz);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t j = detail::broadcast_index(mode, i, c);
                    gb[j] += bwd(g[i], av[i], bv[j], false);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "add", [](T x, T y) { return x + y; },
                              [](T g, T, T, bool) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "sub", [](T x, T y) { return x - y; },
                              [](T g, T, T, bool wrt_a) { return wrt_a ? g : -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "mul", [](T x, T y) { return x * y; },
                              [](T g, T x, T y, bool wrt_a) { return wrt_a ? g * y : g * x; });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_elementwise(const Tensor<T>& x, const char*, FwdFn fwd, BwdFn dfn) {
    Tensor<T> out;
    out.shape = x.shape;
    out.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = fwd(x.data[i]);
    if (x.taped()) {
        out.tape = x.tape;
        auto xv = x.data;
        auto yv = out.data;
        const auto xn = x.node;
        const auto n = x.size();
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, n);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * dfn(xv[i], yv[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_elementwise(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_elementwise(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_elementwise(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                             [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_elementwise(x, "sigmoid",
                             [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                             [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary_elementwise(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> pow_const(const Tensor<T>& x, T e) {
    return unary_elementwise(x, "pow_const", [e](T v) { return std::pow(v, e); },
                             [e](T v, T) { return v == T(0) ? T(0) : e * std::pow(v, e - T(1)); });
}

// y = a*x + b
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    return unary_elementwise(x, "affine", [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T a) {
    return affine(x, a, T(0));
}

// Pass-through gradient inside (lo, hi), zero outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return unary_elementwise(x, "clamp", [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
                             [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// matmul / transpose / reshape / concat

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw ShapeError("matmul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    const std::size_t n = a.shape[0], m = a.shape[1], p = b.shape[1];
    Tensor<T> out = Tensor<T>::zeros(n, p);
    {
        detail::EigenCMap<T> A(a.data.data(), (Eigen::Index)n, (Eigen::Index)m);
        detail::EigenCMap<T> B(b.data.data(), (Eigen::Index)m, (Eigen::Index)p);
        detail::EigenMap<T> C(out.data.data(), (Eigen::Index)n, (Eigen::Index)p);
        C.noalias() = A * B;
    }
    Tape<T>* tape = detail::result_tape<T>({&a, &b}, "matmul");
    if (tape) {
        out.tape = tape;
        auto av = a.data, bv = b.data;
        const auto an = detail::node_or_minus1(a), bn = detail::node_or_minus1(b);
        out.node = tape->record({an, bn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            detail::EigenCMap<T> G(g.data(), (Eigen::Index)n, (Eigen::Index)p);
            if (an >= 0) {
                auto& ga = detail::grad_buf(grads, an, n * m);
                detail::EigenCMap<T> B(bv.data(), (Eigen::Index)m, (Eigen::Index)p);
                detail::EigenMap<T> GA(ga.data(), (Eigen::Index)n, (Eigen::Index)m);
                GA.noalias() += G * B.transpose();
            }
            if (bn >= 0) {
                auto& gb = detail::grad_buf(grads, bn, m * p);
                detail::EigenCMap<T> A(av.data(), (Eigen::Index)n, (Eigen::Index)m);
                detail::EigenMap<T> GB(gb.data(), (Eigen::Index)m, (Eigen::Index)p);
                GB.noalias() += A.transpose() * G;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor<T> out = Tensor<T>::zeros(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = x.data[i * c + j];
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> shape) {
    if (Tensor<T>::count(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x) + " as requested shape");
    Tensor<T> out;
    out.shape = std::move(shape);
    out.data = x.data;
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        const auto n = x.size();
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, n);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

// axis 0 stacks rows, axis 1 widens columns
template <typename T>
Tensor<T> concat(int axis, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat: no arguments");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        const std::size_t f = axis == 0 ? p.cols() : p.rows();
        if (f != fixed) throw ShapeError("concat: shape mismatch " + shape_str(parts[0]) + " vs " + shape_str(p));
        total += axis == 0 ? p.rows() : p.cols();
    }
    const std::size_t out_r = axis == 0 ? total : fixed;
    const std::size_t out_c = axis == 0 ? fixed : total;
    Tensor<T> out = Tensor<T>::zeros(out_r, out_c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off * out_c));
            off += p.rows();
        } else {
            for (std::size_t i = 0; i < p.rows(); ++i)
                std::copy(p.data.begin() + static_cast<std::ptrdiff_t>(i * p.cols()),
                          p.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * p.cols()),
                          out.data.begin() + static_cast<std::ptrdiff_t>(i * out_c + off));
            off += p.cols();
        }
    }
    Tape<T>* tape = nullptr;
    for (const auto& p : parts) {
        std::initializer_list<const Tensor<T>*> one = {&p};
        Tape<T>* t = detail::result_tape<T>(one, "concat");
        if (t) {
            if (tape && tape != t) throw Error("concat: arguments live on different tapes");
            tape = t;
        }
    }
    if (tape) {
        out.tape = tape;
        std::vector<std::int64_t> pn;
        std::vector<std::size_t> pr, pc;
        for (const auto& p : parts) {
            pn.push_back(detail::node_or_minus1(p));
            pr.push_back(p.rows());
            pc.push_back(p.cols());
        }
        out.node = tape->record(pn, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            std::size_t o = 0;
            for (std::size_t k = 0; k < pn.size(); ++k) {
                const std::size_t r = pr[k], c = pc[k];
                if (pn[k] >= 0) {
                    auto& gp = detail::grad_buf(grads, pn[k], r * c);
                    if (axis == 0) {
                        for (std::size_t i = 0; i < r * c; ++i) gp[i] += g[o * out_c + i];
                    } else {
                        for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * out_c + o + j];
                    }
                }
                o += axis == 0 ? r : c;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(std::accumulate(x.data.begin(), x.data.end(), T(0)));
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        const auto n = x.size();
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, n);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Euclidean norm of all entries; subgradient 0 at the origin.
template <typename T>
Tensor<T> norm2(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data) s += v * v;
    const T nrm = std::sqrt(s);
    Tensor<T> out = Tensor<T>::scalar(nrm);
    if (x.taped()) {
        out.tape = x.tape;
        auto xv = x.data;
        const auto xn = x.node;
        const auto n = x.size();
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, n);
            if (nrm > T(0))
                for (std::size_t i = 0; i < n; ++i) gx[i] += g[0] * xv[i] / nrm;
        });
    }
    return out;
}

namespace detail {

// shared kernel for column-wise max over groups of rows; ties go to the
// lowest row index so gradients are deterministic
template <typename T>
Tensor<T> max_over_row_groups(const Tensor<T>& x, std::size_t group, const char* op) {
    const std::size_t r = x.rows(), c = x.cols();
    if (group == 0 || r % group != 0)
        throw ShapeError(std::string(op) + ": rows " + std::to_string(r) + " not divisible by group " + std::to_string(group));
    const std::size_t gcount = r / group;
    Tensor<T> out = Tensor<T>::zeros(gcount, c);
    std::vector<std::size_t> argmax(gcount * c);
    for (std::size_t gi = 0; gi < gcount; ++gi) {
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = gi * group;
            T bv = x.data[best * c + j];
            for (std::size_t i = 1; i < group; ++i) {
                const std::size_t ridx = gi * group + i;
                if (x.data[ridx * c + j] > bv) {
                    bv = x.data[ridx * c + j];
                    best = ridx;
                }
            }
            out.data[gi * c + j] = bv;
            argmax[gi * c + j] = best;
        }
    }
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i] * c + (i % c)] += g[i];
        });
    }
    return out;
}

}  // namespace detail

// column-wise max over all rows -> [1, c]
template <typename T>
Tensor<T> max_reduce(const Tensor<T>& x) {
    return detail::max_over_row_groups(x, x.rows(), "max_reduce");
}

// column-wise max over consecutive groups of `group` rows -> [rows/group, c]
template <typename T>
Tensor<T> max_groups(const Tensor<T>& x, std::size_t group) {
    return detail::max_over_row_groups(x, group, "max_groups");
}

// row-group sum -> [rows/group, c]
template <typename T>
Tensor<T> sum_groups(const Tensor<T>& x, std::size_t group) {
    const std::size_t r = x.rows(), c = x.cols();
    if (group == 0 || r % group != 0)
        throw ShapeError("sum_groups: rows " + std::to_string(r) + " not divisible by group " + std::to_string(group));
    const std::size_t gcount = r / group;
    Tensor<T> out = Tensor<T>::zeros(gcount, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[(i / group) * c + j] += x.data[i * c + j];
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[(i / group) * c + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / gather / losses

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor<T> out = Tensor<T>::zeros(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        T mx = x.data[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.data[i * c + j]);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) {
            out.data[i * c + j] = std::exp(x.data[i * c + j] - mx);
            s += out.data[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= s;
    }
    if (x.taped()) {
        out.tape = x.tape;
        auto yv = out.data;
        const auto xn = x.node;
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < r; ++i) {
                T dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * yv[i * c + j];
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += yv[i * c + j] * (g[i * c + j] - dot);
            }
        });
    }
    return out;
}

// out[r] = x[idx[r]]; backward scatter-adds
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor<T> out = Tensor<T>::zeros(idx.size(), c);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= r)
            throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range [0," + std::to_string(r) + ")");
        std::copy(x.data.begin() + idx[i] * static_cast<std::ptrdiff_t>(c),
                  x.data.begin() + (idx[i] + 1) * static_cast<std::ptrdiff_t>(c),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    if (x.taped()) {
        out.tape = x.tape;
        const auto xn = x.node;
        auto ids = idx;
        out.node = x.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) gx[static_cast<std::size_t>(ids[i]) * c + j] += g[i * c + j];
        });
    }
    return out;
}

// elementwise Huber-style loss with transition at beta
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, T beta = T(1)) {
    if (pred.shape != target.shape)
        throw ShapeError("smooth_l1: shape mismatch " + shape_str(pred) + " vs " + shape_str(target));
    return binary_elementwise(pred, target, "smooth_l1",
                              [beta](T x, T t) {
                                  const T d = std::abs(x - t);
                                  return d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta;
                              },
                              [beta](T g, T x, T t, bool wrt_pred) {
                                  const T d = x - t;
                                  const T slope = std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
                                  return wrt_pred ? g * slope : -g * slope;
                              });
}

// per-row -log softmax(logits)[target]; stable log-sum-exp form
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets) {
    const std::size_t r = logits.rows(), c = logits.cols();
    if (targets.size() != r)
        throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(r) + " rows");
    Tensor<T> out = Tensor<T>::zeros(r, 1);
    std::vector<T> soft(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
            throw ShapeError("cross_entropy_rows: target " + std::to_string(targets[i]) + " out of range");
        T mx = logits.data[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.data[i * c + j]);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(logits.data[i * c + j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) soft[i * c + j] = std::exp(logits.data[i * c + j] - lse);
        out.data[i] = lse - logits.data[i * c + static_cast<std::size_t>(targets[i])];
    }
    if (logits.taped()) {
        out.tape = logits.tape;
        const auto xn = logits.node;
        auto tg = targets;
        out.node = logits.tape->record({xn}, out.shape, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
            auto& gx = detail::grad_buf(grads, xn, r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gx[i * c + j] += g[i] * (soft[i * c + j] - (j == static_cast<std::size_t>(tg[i]) ? T(1) : T(0)));
        });
    }
    return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace graphdet
