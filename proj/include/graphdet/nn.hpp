#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/tensor.hpp"

namespace graphdet {

enum class Activation { none, relu, sigmoid };

// Fully-connected stack description. widths = [in, w1, ..., out]; one
// activation per weight layer.
struct MlpSpec {
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;
    std::uint64_t seed = 0;

    MlpSpec() = default;
    MlpSpec(std::vector<std::size_t> w, std::vector<Activation> a, std::uint64_t s = 0)
        : widths(std::move(w)), activations(std::move(a)), seed(s) {
        validate();
    }

    // hidden layers relu, last layer as given
    static MlpSpec relu_stack(std::vector<std::size_t> w, Activation last = Activation::none, std::uint64_t s = 0) {
        std::vector<Activation> a(w.size() - 1, Activation::relu);
        if (!a.empty()) a.back() = last;
        return MlpSpec(std::move(w), std::move(a), s);
    }

    std::size_t layers() const { return widths.size() - 1; }
    std::size_t in_width() const { return widths.front(); }
    std::size_t out_width() const { return widths.back(); }

    void validate() const {
        if (widths.size() < 2) throw ConfigError("MlpSpec: need at least one layer");
        for (std::size_t w : widths)
            if (w == 0) throw ConfigError("MlpSpec: zero layer width");
        if (activations.size() != widths.size() - 1)
            throw ConfigError("MlpSpec: " + std::to_string(activations.size()) + " activations for " +
                              std::to_string(widths.size() - 1) + " layers");
    }
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
template <typename T>
Tensor<T> init_uniform(std::size_t r, std::size_t c, std::size_t fan_in, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t = Tensor<T>::zeros(r, c);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

// Named parameter tensors in a stable insertion order.
template <typename T>
class ParamStore {
public:
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
        return values_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
        return values_[it->second];
    }

    void set(const std::string& name, Tensor<T> value) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            index_[name] = values_.size();
            names_.push_back(name);
            values_.push_back(std::move(value));
        } else {
            values_[it->second] = std::move(value);
        }
    }

    // define-if-absent
    template <typename InitFn>
    Tensor<T>& def(const std::string& name, InitFn init) {
        auto it = index_.find(name);
        if (it != index_.end()) return values_[it->second];
        index_[name] = values_.size();
        names_.push_back(name);
        values_.push_back(init());
        return values_.back();
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward context: where parameters live, whether we are recording a
// tape, and which tape node each parameter landed on.
template <typename T>
struct ModelCtx {
    ParamStore<T>* store = nullptr;
    Tape<T>* tape = nullptr;
    std::uint64_t init_seed = 0;  // global seed mixed with parameter names
    std::uint64_t fps_seed = 0;   // varies sampling between training steps

    std::unordered_map<std::string, std::int64_t> param_nodes;

    Tensor<T> param(const std::string& name, std::size_t r, std::size_t c, std::size_t fan_in) {
        Tensor<T>& raw = store->def(name, [&] { return init_uniform<T>(r, c, fan_in, mix_seed(init_seed, fnv1a(name))); });
        if (raw.rows() != r || raw.cols() != c)
            throw ShapeError("param '" + name + "': stored " + shape_str(raw) + ", requested [" +
                             std::to_string(r) + "," + std::to_string(c) + "]");
        if (!tape) return raw;
        auto it = param_nodes.find(name);
        if (it != param_nodes.end()) {
            Tensor<T> t = raw;
            t.tape = tape;
            t.node = it->second;
            return t;
        }
        Tensor<T> leafed = tape->leaf(raw);
        param_nodes[name] = leafed.node;
        return leafed;
    }

    // constant (never receives gradients)
    Tensor<T> constant(Tensor<T> t) const {
        t.tape = nullptr;
        t.node = -1;
        return t;
    }
};

// Parameters for one MLP under `prefix`: prefix.w0/.b0/.w1/.b1/...
template <typename T>
std::vector<Tensor<T>> mlp_params(ModelCtx<T>& ctx, const std::string& prefix, const MlpSpec& spec) {
    spec.validate();
    std::vector<Tensor<T>> out;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
        out.push_back(ctx.param(prefix + ".w" + std::to_string(l), fan_in, fan_out, fan_in));
        out.push_back(ctx.param(prefix + ".b" + std::to_string(l), 1, fan_out, fan_in));
    }
    return out;
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation a) {
    switch (a) {
        case Activation::none: return x;
        case Activation::relu: return relu(x);
        case Activation::sigmoid: return sigmoid(x);
    }
    return x;
}

// Row-wise MLP application: x [n, in] -> [n, out].
template <typename T>
Tensor<T> mlp_forward(const MlpSpec& spec, const std::vector<Tensor<T>>& params, const Tensor<T>& x) {
    spec.validate();
    if (params.size() != 2 * spec.layers())
        throw ShapeError("mlp_forward: " + std::to_string(params.size()) + " params for " +
                         std::to_string(spec.layers()) + " layers");
    if (x.cols() != spec.in_width())
        throw ShapeError("mlp_forward: input width " + std::to_string(x.cols()) + " != spec fan-in " +
                         std::to_string(spec.in_width()));
    Tensor<T> h = x;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const Tensor<T>& w = params[2 * l];
        const Tensor<T>& b = params[2 * l + 1];
        if (w.rows() != spec.widths[l] || w.cols() != spec.widths[l + 1])
            throw ShapeError("mlp_forward: weight " + std::to_string(l) + " has shape " + shape_str(w));
        h = apply_activation(add(matmul(h, w), b), spec.activations[l]);
    }
    return h;
}

// convenience: declare params and run in one call
template <typename T>
Tensor<T> mlp(ModelCtx<T>& ctx, const std::string& prefix, const MlpSpec& spec, const Tensor<T>& x) {
    return mlp_forward(spec, mlp_params(ctx, prefix, spec), x);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    std::int64_t step_count() const { return t_; }

    // grads: parameter name -> gradient tensor (missing names are skipped)
    void step(ParamStore<T>& store, const std::unordered_map<std::string, Tensor<T>>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& name : store.names()) {
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            Tensor<T>& p = store.get(name);
            const Tensor<T>& g = it->second;
            if (g.size() != p.size()) throw ShapeError("Adam: gradient shape mismatch for '" + name + "'");
            auto& m = state_[name].first;
            auto& v = state_[name].second;
            if (m.empty()) {
                m.assign(p.size(), T(0));
                v.assign(p.size(), T(0));
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g.data[i]);
                m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * gi);
                v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * gi * gi);
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                p.data[i] = static_cast<T>(p.data[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    // moment buffers as named tensors, for checkpoint resume
    void export_state(ParamStore<T>& out, const std::string& prefix) const {
        out.set(prefix + ".t", Tensor<T>::scalar(static_cast<T>(t_)));
        for (const auto& [name, mv] : std::map<std::string, std::pair<std::vector<T>, std::vector<T>>>(state_.begin(), state_.end())) {
            out.set(prefix + ".m:" + name, Tensor<T>({1, mv.first.size()}, mv.first));
            out.set(prefix + ".v:" + name, Tensor<T>({1, mv.second.size()}, mv.second));
        }
    }

    void import_state(const ParamStore<T>& in, const std::string& prefix) {
        state_.clear();
        t_ = 0;
        if (!in.has(prefix + ".t")) return;
        t_ = static_cast<std::int64_t>(in.get(prefix + ".t").item());
        for (const auto& name : in.names()) {
            const std::string mkey = prefix + ".m:";
            if (name.rfind(mkey, 0) == 0) {
                const std::string pname = name.substr(mkey.size());
                state_[pname].first = in.get(name).data;
                state_[pname].second = in.get(prefix + ".v:" + pname).data;
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, std::pair<std::vector<T>, std::vector<T>>> state_;
};

// gradients keyed by parameter name, ready for Adam::step
template <typename T>
std::unordered_map<std::string, Tensor<T>> gradients_by_name(const ModelCtx<T>& ctx, const Gradients<T>& grads,
                                                             const Tape<T>& tape) {
    std::unordered_map<std::string, Tensor<T>> out;
    for (const auto& [name, node] : ctx.param_nodes) {
        Tensor<T> probe;
        probe.shape = tape.node(node).shape;
        probe.data.assign(tape.node(node).size, T(0));
        probe.tape = const_cast<Tape<T>*>(&tape);
        probe.node = node;
        out[name] = grads.grad(probe);
    }
    return out;
}

}  // namespace graphdet
