#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "attnguide/ops.hpp"
#include "attnguide/tensor.hpp"

// Central finite-difference oracle for gradient checks. Independent of the
// tape: expected derivatives come from re-evaluating the forward build at
// perturbed inputs, never from the backward rules under test.

namespace fdcheck {

template <typename S>
struct Result {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

// build() must reconstruct the computation from the current leaf values and
// return the scalar loss. Analytic gradients come from one taped backward;
// the oracle re-runs build() untaped at x +- h for every leaf coordinate.
template <typename S>
Result<S> compare_grads(const std::function<attnguide::Tensor<S>()>& build,
                        std::vector<attnguide::Tensor<S>>& leaves, double h,
                        double denom_floor) {
    using namespace attnguide;
    std::vector<std::vector<S>> analytic;
    {
        Tape<S> tape;
        TapeScope<S> scope(tape);
        Tensor<S> loss = build();
        tape.backward(loss);
        for (auto& leaf : leaves) analytic.push_back(leaf.grad());
    }
    Result<S> res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (size_t i = 0; i < leaf.numel(); ++i) {
            const S orig = leaf[i];
            leaf[i] = orig + static_cast<S>(h);
            const double fp = static_cast<double>(build().scalar_value());
            leaf[i] = orig - static_cast<S>(h);
            const double fm = static_cast<double>(build().scalar_value());
            leaf[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = static_cast<double>(analytic[li][i]);
            const double denom = std::max({std::fabs(fd), std::fabs(an), denom_floor});
            res.max_rel_err = std::max(res.max_rel_err, std::fabs(fd - an) / denom);
            ++res.checked;
        }
    }
    return res;
}

// Reduces an arbitrary-shaped output to a scalar via a fixed random weighting
// so that every output element influences the loss.
template <typename S>
attnguide::Tensor<S> weighted_sum(const attnguide::Tensor<S>& out, const attnguide::Tensor<S>& w) {
    return attnguide::sum(attnguide::mul(out, w));
}

// Same oracle restricted to a sample of coordinates of one leaf; used for
// large graphs (full denoiser pipelines) where exhaustive FD is too slow.
//
// The per-coordinate denominator is floored at a fraction of the gradient's
// inf-norm: coordinates far below the gradient scale sit at the FD
// cancellation floor, where a relative comparison measures roundoff rather
// than the backward rule (a wrong rule still shows up as O(1) error at the
// gradient scale).
template <typename S>
Result<S> compare_grads_sampled(const std::function<attnguide::Tensor<S>()>& build,
                                attnguide::Tensor<S>& leaf, const std::vector<size_t>& coords,
                                double h, double denom_floor, double scale_frac = 0.1) {
    using namespace attnguide;
    std::vector<S> analytic;
    {
        Tape<S> tape;
        TapeScope<S> scope(tape);
        Tensor<S> loss = build();
        tape.backward(loss);
        analytic = leaf.grad();
    }
    double grad_scale = 0.0;
    for (S g : analytic) grad_scale = std::max(grad_scale, std::fabs(static_cast<double>(g)));
    const double floor = std::max(denom_floor, scale_frac * grad_scale);
    Result<S> res;
    for (size_t i : coords) {
        const S orig = leaf[i];
        leaf[i] = orig + static_cast<S>(h);
        const double fp = static_cast<double>(build().scalar_value());
        leaf[i] = orig - static_cast<S>(h);
        const double fm = static_cast<double>(build().scalar_value());
        leaf[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = static_cast<double>(analytic[i]);
        const double denom = std::max({std::fabs(fd), std::fabs(an), floor});
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(fd - an) / denom);
        ++res.checked;
    }
    return res;
}

}  // namespace fdcheck
