#pragma once

#include "psfv/nn/tape.hpp"

#include <cmath>

namespace psfv::nn {

struct AdamOptions
{
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam update. Increments the step count and clears the
/// gradient afterwards.
template <class Scalar>
void adam_step(Parameter<Scalar>& p, double lr, const AdamOptions& opt = {})
{
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
    p.step_count += 1;
    const auto b1 = Scalar(opt.beta1);
    const auto b2 = Scalar(opt.beta2);
    const auto correction1 = Scalar(1.0 - std::pow(opt.beta1, static_cast<double>(p.step_count)));
    const auto correction2 = Scalar(1.0 - std::pow(opt.beta2, static_cast<double>(p.step_count)));

    auto g = p.grad.data().array();
    auto m = p.adam_m.data().array();
    auto v = p.adam_v.data().array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.value.data().array() -=
        Scalar(lr) * (m / correction1) / ((v / correction2).sqrt() + Scalar(opt.epsilon));
    p.zero_grad();
}

template <class Scalar>
void adam_step(ParameterSet<Scalar>& params, double lr, const AdamOptions& opt = {})
{
    for (auto& p : params) adam_step(p, lr, opt);
}

} // namespace psfv::nn
