#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attnguide/guidance.hpp"
#include "attnguide/model.hpp"
#include "attnguide/rng.hpp"
#include "attnguide/schedule.hpp"

// Deterministic DDIM sampling loop with the guidance hook wired in. Guidance
// and refinement consume no draws from the sampler stream, so a zero-strength
// guided run is bit-identical to an unguided one at the same seed.

namespace attnguide {

// One record per guidance application.
struct TraceRecord {
    size_t step = 0;  // 1-based sampling step
    size_t t = 0;     // training timestep
    double alpha_t = 0;
    double loss = 0;
    double loss_sem = 0;
    double loss_lay = 0;
    std::vector<double> subject_max;
    std::vector<double> box_ratio;
    size_t refine_iters = 0;
    bool refine_met = false;
    bool refined = false;  // a milestone fired at this step
    double refine_min_max_before = 0;  // min over subjects of the smoothed max
    double refine_min_max_after = 0;
};

template <typename S>
struct StoredMap {
    size_t step = 0;
    size_t t = 0;
    Tensor<S> patch_token;  // detached copy, (patches, tokens)
};

template <typename S>
struct SampleResult {
    Tensor<S> image;
    std::vector<StoredMap<S>> map_history;
    std::vector<TraceRecord> trace;
    std::vector<std::pair<size_t, Tensor<S>>> snapshots;  // per SamplerOptions
    uint64_t rng_draws = 0;
};

struct SamplerOptions {
    std::vector<size_t> snapshot_steps;  // capture z before these steps run
};

// One deterministic DDIM update (eta = 0). abar_prev == 1 reconstructs x0;
// the caller clamps at the final step. With clip_denoised the per-step x0
// estimate is clamped to the image range and the noise direction re-derived
// from the clamped estimate.
template <typename S>
Tensor<S> ddim_step(const Tensor<S>& z, const Tensor<S>& eps_hat, double abar_t,
                    double abar_prev, bool clip_denoised = false) {
    check_finite(eps_hat, "ddim_step eps_hat");
    const S sqrt_at = static_cast<S>(std::sqrt(abar_t));
    const S inv_sqrt_at = static_cast<S>(1.0 / std::sqrt(abar_t));
    const S sq_one_minus_at = static_cast<S>(std::sqrt(1.0 - abar_t));
    const S sq_ap = static_cast<S>(std::sqrt(abar_prev));
    const S sq_one_minus_ap = static_cast<S>(std::sqrt(1.0 - abar_prev));
    Tensor<S> out = Tensor<S>::zeros(z.shape());
    for (size_t i = 0; i < z.numel(); ++i) {
        S x0 = (z[i] - sq_one_minus_at * eps_hat[i]) * inv_sqrt_at;
        S eps = eps_hat[i];
        if (clip_denoised) {
            const S clamped = std::clamp(x0, S(-1), S(1));
            if (clamped != x0 && sq_one_minus_at > S(0)) {
                x0 = clamped;
                eps = (z[i] - sqrt_at * x0) / sq_one_minus_at;
            }
        }
        out[i] = sq_ap * x0 + sq_one_minus_ap * eps;
    }
    return out;
}

namespace detail {

template <typename S>
StoredMap<S> store_map(size_t step, size_t t, const AttentionMap<S>& maps) {
    return {step, t, maps.patch_token.detach()};
}

}  // namespace detail

// Continues sampling from state (z, start_step) using the caller's stream.
// sample() wraps this from step 1; suffix replays use it directly.
template <typename S>
SampleResult<S> sample_from(Tensor<S> z, size_t start_step, Rng& rng,
                            const DenoiserModel<S>& model, const PromptSpec& prompt,
                            const LayoutSpec* layout, const GuidanceConfig& gcfg,
                            const NoiseSchedule& sched, const SamplerOptions& opts = {}) {
    gcfg.validate();
    const bool semantic_on = gcfg.enabled && !prompt.subject_positions.empty();
    const bool layout_on = gcfg.enabled && layout != nullptr && layout->active();
    const bool guided = semantic_on || layout_on;
    prompt.validate(semantic_on);
    if (layout != nullptr) layout->validate(prompt);

    const size_t T = gcfg.num_steps;
    if (sched.t_train % T != 0)
        throw ParameterError("sample: training steps " + std::to_string(sched.t_train) +
                             " not divisible by sampling steps " + std::to_string(T));
    const size_t stride = sched.t_train / T;

    SampleResult<S> res;
    const std::vector<size_t>* subjects = &prompt.subject_positions;

    for (size_t k = start_step; k <= T; ++k) {
        const size_t t = sched.t_train - 1 - (k - 1) * stride;
        const double abar_t = sched.alpha_bar[t];
        const double abar_prev = (k == T) ? 1.0 : sched.alpha_bar[t - stride];

        if (std::find(opts.snapshot_steps.begin(), opts.snapshot_steps.end(), k) !=
            opts.snapshot_steps.end())
            res.snapshots.emplace_back(k, z.detach());

        try {
            Tensor<S> eps_hat;
            const AttentionMap<S>* maps_for_history = nullptr;
            AttentionMap<S> held_maps;

            if (guided && guidance_active(k, gcfg)) {
                const double alpha_t = gcfg.alpha_t(abar_t);
                TraceRecord rec;
                rec.step = k;
                rec.t = t;
                rec.alpha_t = alpha_t;

                if (semantic_on) {
                    if (const RefinementMilestone* m = gcfg.milestone_at(k)) {
                        auto refined = refine_latent(z, model, t, prompt, layout, gcfg, alpha_t,
                                                     m->threshold);
                        z = std::move(refined.z);
                        rec.refined = true;
                        rec.refine_iters = refined.iterations;
                        rec.refine_met = refined.met;
                        rec.refine_min_max_before = refined.min_max_before;
                        rec.refine_min_max_after = refined.min_max_after;
                    }
                }

                {
                    Tape<S> tape;
                    TapeScope<S> scope(tape);
                    z.set_requires_grad(true);
                    auto out = model.forward(z, t, prompt);
                    auto gl = total_loss(out.maps, semantic_on ? *subjects : std::vector<size_t>{},
                                         layout_on ? layout : nullptr, gcfg);
                    rec.loss = gl.total;
                    rec.loss_sem = gl.semantic;
                    rec.loss_lay = gl.layout;
                    rec.subject_max = std::move(gl.subject_max);
                    rec.box_ratio = std::move(gl.box_ratio);
                    z = latent_update(z, gl.loss, tape, alpha_t);
                    z.set_requires_grad(false);
                    if (!gcfg.recompute_eps_after_update) {
                        eps_hat = out.eps_hat.detach();
                        held_maps = out.maps;
                        held_maps.patch_token = out.maps.patch_token.detach();
                    }
                }
                if (gcfg.recompute_eps_after_update) {
                    auto out = model.forward(z, t, prompt);
                    eps_hat = std::move(out.eps_hat);
                    held_maps = std::move(out.maps);
                }
                maps_for_history = &held_maps;
                res.trace.push_back(std::move(rec));
            } else {
                auto out = model.forward(z, t, prompt);
                eps_hat = std::move(out.eps_hat);
                held_maps = std::move(out.maps);
                maps_for_history = &held_maps;
            }

            if ((k - 1) % gcfg.map_stride == 0 || k == T)
                res.map_history.push_back(detail::store_map(k, t, *maps_for_history));

            if (gcfg.ancestral && k < T) {
                // Stochastic DDIM (eta = 1): shrink the eps coefficient and
                // add fresh noise from the sampler stream.
                const double var = (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev);
                const double sigma = std::sqrt(std::max(0.0, var));
                const double eps_coef_sq = std::max(0.0, 1.0 - abar_prev - sigma * sigma);
                const S sqrt_at = static_cast<S>(std::sqrt(abar_t));
                const S inv_sqrt_at = static_cast<S>(1.0 / std::sqrt(abar_t));
                const S sq_one_minus_at = static_cast<S>(std::sqrt(1.0 - abar_t));
                const S sq_ap = static_cast<S>(std::sqrt(abar_prev));
                const S eps_coef = static_cast<S>(std::sqrt(eps_coef_sq));
                Tensor<S> next = Tensor<S>::zeros(z.shape());
                for (size_t i = 0; i < z.numel(); ++i) {
                    S x0 = (z[i] - sq_one_minus_at * eps_hat[i]) * inv_sqrt_at;
                    S eps = eps_hat[i];
                    if (gcfg.clip_denoised) {
                        const S clamped = std::clamp(x0, S(-1), S(1));
                        if (clamped != x0 && sq_one_minus_at > S(0)) {
                            x0 = clamped;
                            eps = (z[i] - sqrt_at * x0) / sq_one_minus_at;
                        }
                    }
                    next[i] = sq_ap * x0 + eps_coef * eps +
                              static_cast<S>(sigma * rng.normal());
                }
                z = std::move(next);
            } else {
                z = ddim_step(z, eps_hat, abar_t, abar_prev, gcfg.clip_denoised);
            }
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (at sampling step " + std::to_string(k) +
                               ", t = " + std::to_string(t) + ")");
        }
    }

    // Final step produced x0; clamp to the image range.
    for (size_t i = 0; i < z.numel(); ++i) z[i] = std::clamp(z[i], S(-1), S(1));
    res.image = std::move(z);
    res.rng_draws = rng.draw_count();
    return res;
}

// Entry point: draws the initial latent from the seed's stream and runs the
// full loop.
template <typename S>
SampleResult<S> sample(const DenoiserModel<S>& model, const PromptSpec& prompt,
                       const LayoutSpec* layout, const GuidanceConfig& gcfg,
                       const NoiseSchedule& sched, uint64_t seed,
                       const SamplerOptions& opts = {}) {
    Rng rng(seed);
    Tensor<S> z = Tensor<S>::randn({DenoiserModel<S>::kImage, DenoiserModel<S>::kImage,
                                    DenoiserModel<S>::kChannels},
                                   rng);
    return sample_from(std::move(z), 1, rng, model, prompt, layout, gcfg, sched, opts);
}

}  // namespace attnguide
