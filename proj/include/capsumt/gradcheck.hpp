#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "capsumt/common.hpp"
#include "capsumt/tape.hpp"

namespace capsumt {

// Central-difference check of reverse-mode gradients.
//
// `f` rebuilds the computation from scratch on the given tape and returns a
// scalar loss; it receives leaves already registered with param ids 0..n-1.
// Returns max over all input coordinates of
//   |analytic - central_difference| / max(1, |analytic|).
// Same check driven through a model's parameter set: every parameter
// coordinate is perturbed in place and `build_loss(tape)` re-reads the live
// values. Gradient keys line up because leaves registered by the harness and
// by the model share the parameter ids.
template <class T, class LossFn>
T params_grad_check(ParameterSet<T>& params, LossFn&& build_loss, T eps = T(1e-5));

template <class T, class F>
T grad_check(F&& f, std::vector<Tensor<T>> inputs, T eps = T(1e-5)) {
    if (!(eps > T(0))) throw NumericError("grad_check: eps must be positive");

    auto eval = [&](const std::vector<Tensor<T>>& xs) -> T {
        Tape<T> tape;
        std::vector<Tensor<T>> leaves;
        leaves.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i)
            leaves.push_back(tape.leaf(xs[i], static_cast<int>(i)));
        Tensor<T> loss = f(tape, leaves);
        if (loss.size() != 1) throw ShapeError("grad_check: loss must be scalar");
        return loss.item();
    };

    // Analytic gradients once.
    GradMap<T> analytic;
    {
        Tape<T> tape;
        std::vector<Tensor<T>> leaves;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            leaves.push_back(tape.leaf(inputs[i], static_cast<int>(i)));
        Tensor<T> loss = f(tape, leaves);
        if (loss.size() != 1) throw ShapeError("grad_check: loss must be scalar");
        analytic = tape.backward(loss);
    }

    T worst = T(0);
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        const Tensor<T>& ga = analytic.at(static_cast<int>(which));
        for (std::size_t i = 0; i < inputs[which].size(); ++i) {
            T saved = inputs[which][i];
            inputs[which][i] = saved + eps;
            T up = eval(inputs);
            inputs[which][i] = saved - eps;
            T down = eval(inputs);
            inputs[which][i] = saved;
            T fd = (up - down) / (T(2) * eps);
            if (!std::isfinite(static_cast<double>(fd)))
                throw NumericError("grad_check: non-finite finite difference");
            T a = ga[i];
            T err = std::abs(a - fd) / std::max(T(1), std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

template <class T, class LossFn>
T params_grad_check(ParameterSet<T>& params, LossFn&& build_loss, T eps) {
    std::vector<Tensor<T>> inputs;
    for (std::size_t i = 0; i < params.size(); ++i)
        inputs.push_back(params[static_cast<int>(i)].value);
    auto f = [&](Tape<T>& tape, const std::vector<Tensor<T>>& leaves) {
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            Tensor<T> v = leaves[i];
            v.node = -1;
            params[static_cast<int>(i)].value = std::move(v);
        }
        return build_loss(tape);
    };
    return grad_check<T>(f, std::move(inputs), eps);
}

}  // namespace capsumt
