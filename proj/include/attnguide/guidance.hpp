#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnguide/model.hpp"
#include "attnguide/ops.hpp"
#include "attnguide/prompt.hpp"
#include "attnguide/tensor.hpp"

// Attention-loss guidance: a semantic term that rescues the most neglected
// subject token (1 - max of its smoothed attention map, maxed over subjects)
// and a layout term that penalizes attention mass falling outside a user box
// (squared deficit of the in-box mass ratio). Both are differentiated back to
// the sampling latent and applied as gradient updates; model weights are
// never touched.

namespace attnguide {

struct RefinementMilestone {
    size_t step = 1;         // 1-based sampling step
    double threshold = 0.1;  // minimum smoothed attention max per subject
};

struct GuidanceConfig {
    bool enabled = true;
    double alpha0 = 10.0;   // update size base; alpha_t = alpha0 * sqrt(1 - abar_t)
    size_t num_steps = 50;  // sampling steps T
    size_t t_end = 25;      // guidance stops after paper-step T_end (step 1 == T)
    double sigma = 1.0;     // Gaussian smoothing std, in patch units
    size_t kernel_size = 3;
    double lambda_sem = 1.0;
    double lambda_lay = 1.0;
    std::vector<RefinementMilestone> milestones = {{1, 0.10}, {10, 0.30}, {20, 0.50}};
    size_t max_refine_iters = 20;
    // The semantic loss reads the smoothed map, the layout ratio the raw one;
    // both choices can be flipped.
    bool smooth_semantic = true;
    bool smooth_layout = false;
    // Recompute eps_hat at the updated latent before the denoising step.
    bool recompute_eps_after_update = true;
    size_t map_stride = 5;   // per-step map history thinning
    bool ancestral = false;  // DDPM ancestral sampling (excluded from equality tests)
    // Clamp the per-step x0 estimate to the image range before each update.
    bool clip_denoised = true;

    double alpha_t(double alpha_bar_t) const { return alpha0 * std::sqrt(1.0 - alpha_bar_t); }

    void validate() const {
        if (alpha0 < 0) throw ParameterError("guidance: alpha0 must be >= 0");
        if (num_steps == 0) throw ParameterError("guidance: num_steps must be positive");
        if (t_end < 1 || t_end > num_steps)
            throw ParameterError("guidance: require 1 <= t_end <= num_steps");
        if (kernel_size % 2 == 0) throw ParameterError("guidance: kernel_size must be odd");
        if (!(sigma > 0)) throw ParameterError("guidance: sigma must be positive");
        double prev = 0.0;
        for (const auto& m : milestones) {
            if (m.step < 1 || m.step > num_steps)
                throw ParameterError("guidance: milestone step out of range");
            if (!(m.threshold > 0.0 && m.threshold < 1.0))
                throw ParameterError("guidance: milestone thresholds must lie in (0,1)");
            if (m.threshold < prev)
                throw ParameterError("guidance: milestone thresholds must be non-decreasing");
            prev = m.threshold;
        }
    }

    const RefinementMilestone* milestone_at(size_t step) const {
        for (const auto& m : milestones)
            if (m.step == step) return &m;
        return nullptr;
    }
};

// User layout: (token position, box) pairs in normalized image coordinates.
struct LayoutEntry {
    size_t token_pos = 0;
    double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

struct LayoutSpec {
    std::vector<LayoutEntry> entries;

    bool active() const { return !entries.empty(); }

    void validate(const PromptSpec& prompt) const {
        for (const auto& e : entries) {
            if (!(0.0 <= e.x0 && e.x0 < e.x1 && e.x1 <= 1.0 && 0.0 <= e.y0 && e.y0 < e.y1 &&
                  e.y1 <= 1.0))
                throw ParameterError("layout: box must satisfy 0 <= lo < hi <= 1 per axis");
            if (std::find(prompt.subject_positions.begin(), prompt.subject_positions.end(),
                          e.token_pos) == prompt.subject_positions.end())
                throw ParameterError("layout: token position " + std::to_string(e.token_pos) +
                                     " is not a subject position of the prompt");
        }
    }
};

// Patches whose centers fall inside the box, on the attention grid; an empty
// intersection falls back to the single patch center nearest the box center
// (ties to the lowest flat index).
inline std::vector<size_t> box_to_patches(const LayoutEntry& box, size_t grid) {
    std::vector<size_t> out;
    for (size_t gy = 0; gy < grid; ++gy) {
        const double cy = (static_cast<double>(gy) + 0.5) / static_cast<double>(grid);
        for (size_t gx = 0; gx < grid; ++gx) {
            const double cx = (static_cast<double>(gx) + 0.5) / static_cast<double>(grid);
            if (box.x0 <= cx && cx < box.x1 && box.y0 <= cy && cy < box.y1)
                out.push_back(gy * grid + gx);
        }
    }
    if (out.empty()) {
        const double bx = 0.5 * (box.x0 + box.x1), by = 0.5 * (box.y0 + box.y1);
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t gy = 0; gy < grid; ++gy)
            for (size_t gx = 0; gx < grid; ++gx) {
                const double cx = (static_cast<double>(gx) + 0.5) / static_cast<double>(grid);
                const double cy = (static_cast<double>(gy) + 0.5) / static_cast<double>(grid);
                const double d = (cx - bx) * (cx - bx) + (cy - by) * (cy - by);
                if (d < best_d) {
                    best_d = d;
                    best = gy * grid + gx;
                }
            }
        out.push_back(best);
    }
    return out;
}

// Gaussian smoothing of a spatial attention grid under wrap padding; recorded
// on the tape, and exactly mass-preserving since the kernel sums to 1.
template <typename S>
Tensor<S> smooth_map(const Tensor<S>& map, double sigma, size_t kernel_size) {
    for (size_t i = 0; i < map.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(map[i])))
            throw NumericError("smooth_map: non-finite entry at flat index " + std::to_string(i));
        if (map[i] < S(0))
            throw ParameterError("smooth_map: negative entry at flat index " + std::to_string(i));
    }
    return conv2d_wrap(map, gaussian_kernel<S>(static_cast<S>(sigma), kernel_size));
}

template <typename S>
struct SemanticLossResult {
    Tensor<S> loss;                    // scalar, max over subjects of 1 - max(map_s)
    std::vector<double> per_subject;   // L_s values in subject order
    std::vector<double> smoothed_max;  // max of the (smoothed) map per subject
};

template <typename S>
SemanticLossResult<S> semantic_loss(const AttentionMap<S>& maps,
                                    const std::vector<size_t>& subjects,
                                    const GuidanceConfig& cfg) {
    if (subjects.empty()) throw ParameterError("semantic_loss: empty subject set");
    SemanticLossResult<S> res;
    std::vector<Tensor<S>> per_subject_loss;
    per_subject_loss.reserve(subjects.size());
    for (size_t s : subjects) {
        Tensor<S> grid = maps.token_grid(s);
        if (cfg.smooth_semantic) grid = smooth_map(grid, cfg.sigma, cfg.kernel_size);
        Tensor<S> mx = reduce_max(grid);
        Tensor<S> ls = affine(mx, S(-1), S(1));  // 1 - max
        res.smoothed_max.push_back(static_cast<double>(mx.scalar_value()));
        res.per_subject.push_back(static_cast<double>(ls.scalar_value()));
        per_subject_loss.push_back(ls);
    }
    res.loss = per_subject_loss.size() == 1 ? per_subject_loss[0]
                                            : reduce_max(stack_scalars(per_subject_loss));
    return res;
}

template <typename S>
struct LayoutEnergyResult {
    Tensor<S> energy;                // scalar, mean over entries of (1 - r)^2
    std::vector<double> ratios;      // in-box mass ratio r per entry
    std::vector<double> per_entry;   // (1 - r)^2 per entry
};

template <typename S>
LayoutEnergyResult<S> layout_energy(const AttentionMap<S>& maps, const LayoutSpec& layout,
                                    const GuidanceConfig& cfg) {
    if (!layout.active()) throw ParameterError("layout_energy: empty layout");
    const size_t grid = static_cast<size_t>(
        std::lround(std::sqrt(static_cast<double>(maps.patch_token.size(0)))));
    LayoutEnergyResult<S> res;
    std::vector<Tensor<S>> per_entry;
    per_entry.reserve(layout.entries.size());
    for (const auto& entry : layout.entries) {
        Tensor<S> g = maps.token_grid(entry.token_pos);
        if (cfg.smooth_layout) g = smooth_map(g, cfg.sigma, cfg.kernel_size);
        Tensor<S> mask = Tensor<S>::zeros({grid, grid});
        for (size_t p : box_to_patches(entry, grid)) mask[p] = S(1);
        Tensor<S> total = sum(g);
        if (!(static_cast<double>(total.scalar_value()) > 0.0))
            throw NumericError("layout_energy: degenerate attention, token column has zero mass");
        Tensor<S> inside = sum(mul(g, mask));
        Tensor<S> ratio = div(inside, total);
        Tensor<S> deficit = affine(ratio, S(-1), S(1));
        Tensor<S> e = mul(deficit, deficit);
        res.ratios.push_back(static_cast<double>(ratio.scalar_value()));
        res.per_entry.push_back(static_cast<double>(e.scalar_value()));
        per_entry.push_back(e);
    }
    res.energy = per_entry.size() == 1 ? per_entry[0] : mean(stack_scalars(per_entry));
    return res;
}

template <typename S>
struct GuidanceLossResult {
    Tensor<S> loss;  // lambda_sem * semantic + lambda_lay * layout
    double total = 0;
    double semantic = 0;  // unweighted component values
    double layout = 0;
    std::vector<double> subject_max;
    std::vector<double> per_subject;
    std::vector<double> box_ratio;
};

template <typename S>
GuidanceLossResult<S> total_loss(const AttentionMap<S>& maps, const std::vector<size_t>& subjects,
                                 const LayoutSpec* layout, const GuidanceConfig& cfg) {
    const bool sem_active = !subjects.empty();
    const bool lay_active = layout != nullptr && layout->active();
    if (!sem_active && !lay_active)
        throw ParameterError("total_loss: neither subjects nor layout active");
    GuidanceLossResult<S> res;
    std::optional<Tensor<S>> acc;
    if (sem_active) {
        auto sem = semantic_loss(maps, subjects, cfg);
        res.semantic = static_cast<double>(sem.loss.scalar_value());
        res.subject_max = std::move(sem.smoothed_max);
        res.per_subject = std::move(sem.per_subject);
        acc = scale(sem.loss, static_cast<S>(cfg.lambda_sem));
    }
    if (lay_active) {
        auto lay = layout_energy(maps, *layout, cfg);
        res.layout = static_cast<double>(lay.energy.scalar_value());
        res.box_ratio = std::move(lay.ratios);
        Tensor<S> weighted = scale(lay.energy, static_cast<S>(cfg.lambda_lay));
        acc = acc ? add(*acc, weighted) : weighted;
    }
    res.loss = *acc;
    res.total = static_cast<double>(res.loss.scalar_value());
    return res;
}

// Z' = Z - alpha_t * dL/dZ, returned as a fresh leaf so the next forward pass
// starts a clean tape. alpha_t == 0 reproduces Z bit-for-bit.
template <typename S>
Tensor<S> latent_update(const Tensor<S>& z, const Tensor<S>& loss, Tape<S>& tape, double alpha_t) {
    if (!z.requires_grad())
        throw ContractError("latent_update: latent does not require gradients");
    tape.backward(loss);
    if (!z.has_grad())
        throw ContractError("latent_update: loss is not connected to the latent");
    if (alpha_t == 0.0) return z.clone();
    const auto& g = z.grad();
    Tensor<S> out = Tensor<S>::zeros(z.shape());
    const S a = static_cast<S>(alpha_t);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = z[i] - a * g[i];
    out.set_requires_grad(z.requires_grad());
    return out;
}

// Whether guidance applies at a 1-based sampling step. Step 1 corresponds to
// paper step T (noisiest); guidance covers paper steps T down to t_end, i.e.
// the first T - t_end + 1 sampling steps.
inline bool guidance_active(size_t step_index, const GuidanceConfig& cfg) {
    if (step_index < 1 || step_index > cfg.num_steps)
        throw ParameterError("guidance_active: step " + std::to_string(step_index) +
                             " outside 1.." + std::to_string(cfg.num_steps));
    return cfg.enabled && step_index <= cfg.num_steps - cfg.t_end + 1;
}

template <typename S>
struct RefineResult {
    Tensor<S> z;
    size_t iterations = 0;  // latent updates performed
    bool met = false;       // all subjects reached the threshold
    double min_max_before = 0;
    double min_max_after = 0;
};

// Iteratively updates the latent until every subject's smoothed attention max
// clears the milestone threshold, up to max_refine_iters updates. Each update
// descends the combined loss; the stopping test reads only the subject maxes.
template <typename S>
RefineResult<S> refine_latent(Tensor<S> z, const DenoiserModel<S>& model, size_t t,
                              const PromptSpec& prompt, const LayoutSpec* layout,
                              const GuidanceConfig& cfg, double alpha_t, double threshold) {
    if (prompt.subject_positions.empty())
        throw ParameterError("refine_latent: prompt has no subject positions");
    z = z.clone();  // leave the caller's tensor untouched
    RefineResult<S> res;
    bool first_pass = true;
    while (true) {
        Tape<S> tape;
        TapeScope<S> scope(tape);
        z.set_requires_grad(true);
        auto out = model.forward(z, t, prompt);
        auto gl = total_loss(out.maps, prompt.subject_positions, layout, cfg);
        const double min_max =
            *std::min_element(gl.subject_max.begin(), gl.subject_max.end());
        if (first_pass) {
            res.min_max_before = min_max;
            first_pass = false;
        }
        res.min_max_after = min_max;
        if (min_max >= threshold) {
            res.met = true;
            break;
        }
        if (res.iterations >= cfg.max_refine_iters) break;
        z = latent_update(z, gl.loss, tape, alpha_t);
        ++res.iterations;
    }
    res.z = std::move(z);
    return res;
}

}  // namespace attnguide
