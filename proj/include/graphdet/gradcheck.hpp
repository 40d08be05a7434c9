#pragma once

#include <functional>

#include "graphdet/tensor.hpp"

namespace graphdet {

// Scalar-valued function of one tensor, rebuilt on a fresh tape per call.
using GradCheckFn = std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

// Compares reverse-mode gradients against central finite differences.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
// Only meaningful in 64-bit; float32 differences drown in rounding noise.
inline double grad_check(const GradCheckFn& f, const Tensor<double>& x, double step = 1e-4) {
    Tape<double> tape;
    Tensor<double> xl = tape.leaf(x);
    Tensor<double> loss = f(tape, xl);
    if (loss.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    Gradients<double> grads = tape.backward(loss);
    Tensor<double> analytic = grads.grad(xl);

    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor<double> xp = x, xm = x;
        xp.data[i] += step;
        xm.data[i] -= step;
        Tape<double> tp, tm;
        const double fp = f(tp, tp.leaf(xp)).item();
        const double fm = f(tm, tm.leaf(xm)).item();
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace graphdet
