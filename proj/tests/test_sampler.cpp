#include <doctest.h>

#include <cmath>

#include "attnguide/sampler.hpp"

using namespace attnguide;

namespace {

PromptSpec two_subject_prompt() {
    PromptSpec p;
    p.token_ids = {vocab::kColorBase + 0, vocab::kShapeBase + 0, vocab::kAnd,
                   vocab::kColorBase + 2, vocab::kShapeBase + 1, vocab::kPad,
                   vocab::kPad,           vocab::kPad};
    p.subject_positions = {1, 4};
    p.attribute_bindings = {{1, 0}, {4, 3}};
    return p;
}

LayoutSpec halves_layout() {
    LayoutSpec spec;
    spec.entries.push_back({1, 0.0, 0.0, 0.5, 1.0});
    spec.entries.push_back({4, 0.5, 0.0, 1.0, 1.0});
    return spec;
}

GuidanceConfig unguided_cfg() {
    GuidanceConfig g;
    g.enabled = false;
    return g;
}

}  // namespace

TEST_CASE("ddim_step algebra") {
    Rng rng(3);
    Tensor<double> z = Tensor<double>::randn({4, 4, 3}, rng);
    Tensor<double> eps = Tensor<double>::randn({4, 4, 3}, rng);

    SUBCASE("degenerate stride is a fixed point for any eps") {
        Tensor<double> out = ddim_step(z, eps, 0.37, 0.37);
        for (size_t i = 0; i < z.numel(); ++i)
            CHECK(out[i] == doctest::Approx(z[i]).epsilon(1e-12));
    }
    SUBCASE("true-noise inversion reconstructs x0") {
        Tensor<double> x0 = Tensor<double>::randn({4, 4, 3}, rng);
        NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
        for (size_t t : {100ul, 500ul, 900ul}) {
            Tensor<double> zt = forward_diffuse(x0, t, eps, sched);
            Tensor<double> rec = ddim_step(zt, eps, sched.alpha_bar[t], 1.0);
            for (size_t i = 0; i < x0.numel(); ++i)
                CHECK(rec[i] == doctest::Approx(x0[i]).epsilon(1e-5));
        }
    }
    SUBCASE("non-finite eps_hat is a numeric error") {
        Tensor<double> bad = eps.clone();
        bad[5] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(ddim_step(z, bad, 0.5, 0.4), NumericError);
    }
    SUBCASE("clip_denoised only bites when x0 estimates leave the image range") {
        // Small z, small eps: x0 estimates stay inside [-1, 1].
        Tensor<double> zs = scale(z, 0.05);
        Tensor<double> es = scale(eps, 0.05);
        Tensor<double> plain = ddim_step(zs, es, 0.8, 0.6, false);
        Tensor<double> clipped = ddim_step(zs, es, 0.8, 0.6, true);
        CHECK(plain.data() == clipped.data());

        // Out-of-range x0 estimate: x0 clamps to 1 and eps re-derives from the
        // clamped estimate (hand recomputation).
        Tensor<double> zbig = Tensor<double>::full({2, 2, 3}, 3.0);
        Tensor<double> ezero = Tensor<double>::zeros({2, 2, 3});
        Tensor<double> c = ddim_step(zbig, ezero, 0.9, 0.7, true);
        const double eps_rederived = (3.0 - std::sqrt(0.9)) / std::sqrt(0.1);
        const double expected = std::sqrt(0.7) + std::sqrt(0.3) * eps_rederived;
        for (size_t i = 0; i < c.numel(); ++i)
            CHECK(c[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("sampling is deterministic and the image lands in range") {
    auto model = DenoiserModel<float>::init(41);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();
    GuidanceConfig gcfg;  // guided, defaults

    auto a = sample(model, prompt, nullptr, gcfg, sched, 7);
    auto b = sample(model, prompt, nullptr, gcfg, sched, 7);
    CHECK(a.image.data() == b.image.data());  // bit-identical trajectories
    CHECK(a.rng_draws == b.rng_draws);
    for (size_t i = 0; i < a.image.numel(); ++i) {
        CHECK(a.image[i] >= -1.0f);
        CHECK(a.image[i] <= 1.0f);
    }

    auto c = sample(model, prompt, nullptr, gcfg, sched, 8);
    CHECK(c.image.data() != a.image.data());
}

TEST_CASE("guidance schedule: exactly 26 of 50 steps guided under defaults") {
    auto model = DenoiserModel<float>::init(41);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();
    GuidanceConfig gcfg;
    gcfg.milestones.clear();  // schedule check only

    auto res = sample(model, prompt, nullptr, gcfg, sched, 11);
    CHECK(res.trace.size() == 26);
    CHECK(res.trace.front().step == 1);
    CHECK(res.trace.front().t == 999);
    CHECK(res.trace.back().step == 26);
    CHECK(res.trace.back().t == 499);
    for (const auto& rec : res.trace) CHECK(rec.subject_max.size() == 2);
}

TEST_CASE("zero-strength guidance is bit-identical to the unguided sampler") {
    auto model = DenoiserModel<float>::init(43);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();
    LayoutSpec layout = halves_layout();

    GuidanceConfig noop;
    noop.alpha0 = 0.0;
    noop.milestones.clear();

    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto guided = sample(model, prompt, &layout, noop, sched, seed);
        auto plain = sample(model, prompt, nullptr, unguided_cfg(), sched, seed);
        CHECK(guided.image.data() == plain.image.data());
        // Guidance and refinement consume nothing from the sampler stream.
        CHECK(guided.rng_draws == plain.rng_draws);
        CHECK(guided.trace.size() == 26);  // trace still records the no-op window
        CHECK(plain.trace.empty());
    }
}

TEST_CASE("suffix after the guidance window is byte-identical to the unguided rule") {
    auto model = DenoiserModel<float>::init(47);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();
    LayoutSpec layout = halves_layout();

    GuidanceConfig gcfg;
    gcfg.max_refine_iters = 2;

    SamplerOptions opts;
    opts.snapshot_steps = {27};  // first unguided step
    auto guided = sample(model, prompt, &layout, gcfg, sched, 5, opts);
    REQUIRE(guided.snapshots.size() == 1);

    Rng dummy(0);
    auto replay = sample_from(guided.snapshots[0].second, 27, dummy, model, prompt, nullptr,
                              unguided_cfg(), sched);
    CHECK(replay.image.data() == guided.image.data());
}

TEST_CASE("refinement milestones report per the cap contract") {
    auto model = DenoiserModel<float>::init(53);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();

    GuidanceConfig gcfg;
    gcfg.max_refine_iters = 2;
    // Untrained model: attention is near uniform, milestones will cap out.
    auto res = sample(model, prompt, nullptr, gcfg, sched, 9);
    size_t refined_steps = 0;
    for (const auto& rec : res.trace)
        if (rec.refined) {
            ++refined_steps;
            CHECK((rec.refine_met || rec.refine_iters == gcfg.max_refine_iters));
        }
    CHECK(refined_steps == gcfg.milestones.size());
}

TEST_CASE("ancestral sampling draws noise and stays seeded") {
    auto model = DenoiserModel<float>::init(59);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    PromptSpec prompt = two_subject_prompt();

    GuidanceConfig anc = unguided_cfg();
    anc.ancestral = true;
    auto a = sample(model, prompt, nullptr, anc, sched, 21);
    auto b = sample(model, prompt, nullptr, anc, sched, 21);
    CHECK(a.image.data() == b.image.data());

    auto ddim = sample(model, prompt, nullptr, unguided_cfg(), sched, 21);
    CHECK(a.image.data() != ddim.image.data());
    CHECK(a.rng_draws > ddim.rng_draws);
}

TEST_CASE("map history thins to every 5th step plus the final one") {
    auto model = DenoiserModel<float>::init(61);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    auto res = sample(model, two_subject_prompt(), nullptr, unguided_cfg(), sched, 2);
    REQUIRE(res.map_history.size() == 11);
    CHECK(res.map_history.front().step == 1);
    CHECK(res.map_history[1].step == 6);
    CHECK(res.map_history.back().step == 50);
    for (const auto& m : res.map_history) CHECK(m.patch_token.shape() == std::vector<size_t>{64, 8});
}
