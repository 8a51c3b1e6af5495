#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "attnguide/errors.hpp"
#include "attnguide/tensor.hpp"

namespace attnguide {

// Linear-beta noise schedule. alpha_bar is kept in double regardless of the
// run precision; samplers cast at the point of use.
struct NoiseSchedule {
    size_t t_train = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bar;
};

inline NoiseSchedule build_schedule(size_t t_train, double beta_start, double beta_end) {
    if (t_train < 2) throw ParameterError("build_schedule: need at least 2 steps");
    if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
        throw ParameterError("build_schedule: require 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.t_train = t_train;
    s.betas.resize(t_train);
    s.alphas.resize(t_train);
    s.alpha_bar.resize(t_train);
    double prod = 1.0;
    for (size_t t = 0; t < t_train; ++t) {
        const double beta =
            beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                             static_cast<double>(t_train - 1);
        s.betas[t] = beta;
        s.alphas[t] = 1.0 - beta;
        prod *= s.alphas[t];
        s.alpha_bar[t] = prod;
    }
    if (!(s.alpha_bar.front() > 0.99) || !(s.alpha_bar.back() < 0.01))
        throw ParameterError("build_schedule: schedule does not span the required noise range "
                             "(alpha_bar[0] = " + std::to_string(s.alpha_bar.front()) +
                             ", alpha_bar[last] = " + std::to_string(s.alpha_bar.back()) + ")");
    return s;
}

// q-sample with an explicit mixing coefficient: sqrt(abar)*x0 + sqrt(1-abar)*eps.
template <typename S>
Tensor<S> diffuse_with(const Tensor<S>& x0, const Tensor<S>& eps, double alpha_bar_t) {
    if (x0.shape() != eps.shape())
        throw DimensionError("forward_diffuse: noise shape " + shape_str(eps.shape()) +
                             " does not match image " + shape_str(x0.shape()));
    const S a = static_cast<S>(std::sqrt(alpha_bar_t));
    const S b = static_cast<S>(std::sqrt(1.0 - alpha_bar_t));
    Tensor<S> out = Tensor<S>::zeros(x0.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

template <typename S>
Tensor<S> forward_diffuse(const Tensor<S>& x0, size_t t, const Tensor<S>& eps,
                          const NoiseSchedule& sched) {
    if (t >= sched.t_train)
        throw ParameterError("forward_diffuse: t = " + std::to_string(t) + " out of range [0, " +
                             std::to_string(sched.t_train) + ")");
    return diffuse_with(x0, eps, sched.alpha_bar[t]);
}

}  // namespace attnguide
