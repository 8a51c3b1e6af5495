#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attnguide/model.hpp"
#include "attnguide/schedule.hpp"
#include "attnguide/threading.hpp"

namespace attnguide {

struct TrainSample {
    Tensor<float> image;  // in [-1, 1]
    PromptSpec prompt;
};

struct TrainConfig {
    size_t steps = 20000;
    size_t batch = 64;
    double lr = 2e-4;
    // Optional step decay: from decay_step onward the rate drops to decay_lr.
    size_t decay_step = 0;  // 0 disables
    double decay_lr = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 1;
    double loss_target = 0.05;
    int threads = 0;  // <= 0: auto
};

struct TrainResult {
    std::vector<double> loss_curve;  // batch loss per step
    double final_loss = 0.0;         // mean over the last 100 steps
    bool reached_target = false;
};

namespace detail {

// Adam with bias correction. State is kept per parameter in float, matching
// the parameter precision; lr == 0 leaves parameters bit-identical.
struct AdamState {
    std::vector<std::vector<float>> m, v;
    size_t step = 0;
};

inline void adam_step(std::vector<std::pair<std::string, Tensor<float>*>>& params,
                      const std::vector<std::vector<float>>& grads, AdamState& st,
                      const TrainConfig& cfg, double lr) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        auto& theta = params[p].second->data();
        auto& m = st.m[p];
        auto& v = st.v[p];
        const auto& g = grads[p];
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = static_cast<float>(cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i]);
            v[i] = static_cast<float>(cfg.adam_beta2 * v[i] +
                                      (1.0 - cfg.adam_beta2) * static_cast<double>(g[i]) * g[i]);
            if (lr != 0.0) {
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                theta[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
            }
        }
    }
}

}  // namespace detail

// Epsilon-prediction training: minimizes MSE(eps, eps_hat) over uniformly
// sampled timesteps. Per-sample noise streams are derived from (seed, global
// sample index), so the data path is identical across worker counts; only
// the floating-point reduction order depends on the thread count, which the
// caller records in its manifest.
inline TrainResult train(DenoiserModel<float>& model, const std::vector<TrainSample>& dataset,
                         const NoiseSchedule& sched, const TrainConfig& cfg,
                         const std::function<void(size_t, double)>& on_step = nullptr) {
    if (dataset.empty()) throw ParameterError("train: empty dataset");
    if (cfg.batch == 0) throw ParameterError("train: batch must be positive");

    const int workers = std::min<int>(resolve_threads(cfg.threads), static_cast<int>(cfg.batch));
    auto params = model.named_params();

    detail::AdamState adam;
    adam.m.resize(params.size());
    adam.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
        adam.m[p].assign(params[p].second->numel(), 0.0f);
        adam.v[p].assign(params[p].second->numel(), 0.0f);
    }

    TrainResult result;
    result.loss_curve.reserve(cfg.steps);

    std::vector<double> worker_loss(static_cast<size_t>(workers));
    std::vector<std::vector<std::vector<float>>> worker_grads(static_cast<size_t>(workers));

    for (size_t step = 0; step < cfg.steps; ++step) {
        parallel_for(static_cast<size_t>(workers), workers, [&](size_t w) {
            DenoiserModel<float> local = model.clone();
            local.set_requires_grad(true);
            auto local_params = local.named_params();

            Tape<float> tape;
            TapeScope<float> scope(tape);
            Tensor<float> loss;
            bool first = true;
            const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
            for (size_t i = w; i < cfg.batch; i += static_cast<size_t>(workers)) {
                Rng srng(Rng::derive_stream(cfg.seed, step * cfg.batch + i));
                const auto& sample =
                    dataset[static_cast<size_t>(srng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
                const size_t t = static_cast<size_t>(
                    srng.uniform_int(0, static_cast<int>(sched.t_train) - 1));
                Tensor<float> eps = Tensor<float>::randn(sample.image.shape(), srng);
                Tensor<float> z_t = diffuse_with(sample.image, eps, sched.alpha_bar[t]);
                DenoiserOutput<float> out = local.forward(z_t, t, sample.prompt);
                Tensor<float> err = sub(out.eps_hat, eps);
                Tensor<float> term = scale(mean(mul(err, err)), inv_batch);
                loss = first ? term : add(loss, term);
                first = false;
            }
            tape.backward(loss);
            worker_loss[w] = static_cast<double>(loss.scalar_value());
            auto& grads = worker_grads[w];
            grads.resize(local_params.size());
            for (size_t p = 0; p < local_params.size(); ++p) {
                if (local_params[p].second->has_grad())
                    grads[p] = local_params[p].second->grad();
                else
                    grads[p].assign(local_params[p].second->numel(), 0.0f);
            }
        });

        double batch_loss = 0.0;
        for (int w = 0; w < workers; ++w) batch_loss += worker_loss[static_cast<size_t>(w)];
        if (!std::isfinite(batch_loss))
            throw NumericError("training diverged: loss " + std::to_string(batch_loss) +
                               " at step " + std::to_string(step) + " (lr " +
                               std::to_string(cfg.lr) + ", batch " + std::to_string(cfg.batch) + ")");

        std::vector<std::vector<float>> grads(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            grads[p] = worker_grads[0][p];
            for (int w = 1; w < workers; ++w) {
                const auto& gw = worker_grads[static_cast<size_t>(w)][p];
                for (size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += gw[i];
            }
        }
        const double lr =
            (cfg.decay_step > 0 && step >= cfg.decay_step) ? cfg.decay_lr : cfg.lr;
        detail::adam_step(params, grads, adam, cfg, lr);

        result.loss_curve.push_back(batch_loss);
        if (on_step) on_step(step, batch_loss);
    }

    const size_t tail = std::min<size_t>(100, result.loss_curve.size());
    if (tail > 0) {
        double acc = 0;
        for (size_t i = result.loss_curve.size() - tail; i < result.loss_curve.size(); ++i)
            acc += result.loss_curve[i];
        result.final_loss = acc / static_cast<double>(tail);
    }
    result.reached_target = tail > 0 && result.final_loss < cfg.loss_target;
    return result;
}

// Moving average of the loss curve with the given window; used to check the
// broad downward trend of a training run.
inline std::vector<double> moving_average(const std::vector<double>& xs, size_t window) {
    std::vector<double> out;
    if (xs.size() < window || window == 0) return out;
    double acc = 0;
    for (size_t i = 0; i < window; ++i) acc += xs[i];
    out.push_back(acc / static_cast<double>(window));
    for (size_t i = window; i < xs.size(); ++i) {
        acc += xs[i] - xs[i - window];
        out.push_back(acc / static_cast<double>(window));
    }
    return out;
}

}  // namespace attnguide
