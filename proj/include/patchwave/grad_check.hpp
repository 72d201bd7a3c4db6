#pragma once

// Central-difference gradient verification. Always runs in double; the model
// code is templated on the scalar type exactly so this check can be tight.

#include <functional>

#include "patchwave/tape.hpp"

namespace patchwave {

// `f` builds a scalar-valued graph from (tape, x_id) and returns the loss id.
// Returns the max over coordinates of
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
template <class F>
double grad_check(F&& f, const Tensor<double>& x, double h = 1e-5) {
    GradTape<double> tape;
    ValueId xid = tape.leaf(x, /*trainable=*/true);
    ValueId loss = f(tape, xid);
    if (tape.val(loss).numel() != 1) throw shape_error("grad_check: f must be scalar-valued");
    tape.backward(loss);
    const Tensor<double> analytic = tape.grad(xid);

    auto eval = [&](const Tensor<double>& point) {
        GradTape<double> t2;
        ValueId id = t2.leaf(point, /*trainable=*/false);
        ValueId l = f(t2, id);
        return t2.val(l).data[0];
    };

    Tensor<double> probe = x;
    double worst = 0.0;
    for (size_t i = 0; i < probe.data.size(); ++i) {
        const double keep = probe.data[i];
        probe.data[i] = keep + h;
        const double fp = eval(probe);
        probe.data[i] = keep - h;
        const double fm = eval(probe);
        probe.data[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace patchwave
