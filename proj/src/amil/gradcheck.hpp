#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "amil/tensor.hpp"

namespace amil {

// Compares the tape gradient of a scalar-valued function against central
// finite differences, coordinate by coordinate. Returns
//   max_i |analytic_i - (f(x+h e_i) - f(x-h e_i)) / 2h| / max(1, |analytic_i|).
// f is called once with a tape to obtain the analytic gradient and then
// forward-only for every perturbed evaluation, so the numeric side never
// touches the adjoint code it is checking. f must be deterministic.
template <std::floating_point S>
double finite_diff_check(const std::function<Tensor<S>(const Tensor<S>&, Tape<S>*)>& f,
                         Tensor<S> x, double step) {
    x.set_requires_grad(true);
    x.ensure_grad();
    x.zero_grad();

    Tape<S> tape;
    Tensor<S> loss = f(x, &tape);
    tape.backward(loss);

    std::vector<double> analytic(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) analytic[static_cast<std::size_t>(i)] = x.grad()[i];

    const S h = static_cast<S>(step);
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const S saved = x[i];
        x[i] = saved + h;
        const double fp = static_cast<double>(f(x, nullptr).item());
        x[i] = saved - h;
        const double fm = static_cast<double>(f(x, nullptr).item());
        x[i] = saved;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
        const double a = analytic[static_cast<std::size_t>(i)];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace amil
