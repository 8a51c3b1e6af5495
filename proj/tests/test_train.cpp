#include <doctest.h>

#include <cmath>

#include "attnguide/dataset.hpp"
#include "attnguide/train.hpp"

using namespace attnguide;

TEST_CASE("zero learning rate leaves weights bit-identical") {
    Dataset ds = make_dataset(4, 2);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    auto model = DenoiserModel<float>::init(5);
    auto before = model.clone();

    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.lr = 0.0;
    cfg.threads = 1;
    train(model, ds.samples, sched, cfg);

    auto a = model.named_params();
    auto b = before.named_params();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].second->data() == b[i].second->data());
}

TEST_CASE("training is deterministic for a fixed worker count") {
    Dataset ds = make_dataset(8, 3);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.threads = 2;
    cfg.seed = 9;

    auto m1 = DenoiserModel<float>::init(5);
    auto r1 = train(m1, ds.samples, sched, cfg);
    auto m2 = DenoiserModel<float>::init(5);
    auto r2 = train(m2, ds.samples, sched, cfg);
    CHECK(r1.loss_curve == r2.loss_curve);
    auto a = m1.named_params();
    auto b = m2.named_params();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].second->data() == b[i].second->data());
}

TEST_CASE("divergence aborts with diagnostics") {
    Dataset ds = make_dataset(2, 4);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    auto model = DenoiserModel<float>::init(5);
    model.patch_w[0] = std::numeric_limits<float>::infinity();

    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.threads = 1;
    CHECK_THROWS_WITH_AS(train(model, ds.samples, sched, cfg), doctest::Contains("diverged"),
                         NumericError);
}

TEST_CASE("memorization sanity: one-sample dataset overfits") {
    Dataset ds = make_dataset(1, 6);
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    auto model = DenoiserModel<float>::init(5);

    TrainConfig cfg;
    cfg.steps = 500;
    cfg.batch = 8;
    cfg.lr = 5e-3;
    cfg.threads = 2;
    cfg.seed = 12;
    cfg.loss_target = 0.15;
    auto res = train(model, ds.samples, sched, cfg);
    INFO("final loss " << res.final_loss << " (initial about 1.0)");
    // Calibrated oracle value: this recipe lands near 0.08; the eps-MSE floor
    // is set by tiny-t noise amplification, not by memorization capacity.
    CHECK(res.final_loss < 0.15);
    CHECK(res.reached_target);
    CHECK(res.final_loss < 0.2 * res.loss_curve.front());
}

TEST_CASE("moving average helper") {
    std::vector<double> xs{4, 2, 6, 0, 8};
    auto ma = moving_average(xs, 2);
    REQUIRE(ma.size() == 4);
    CHECK(ma[0] == doctest::Approx(3.0));
    CHECK(ma[3] == doctest::Approx(4.0));
    CHECK(moving_average(xs, 6).empty());
}
