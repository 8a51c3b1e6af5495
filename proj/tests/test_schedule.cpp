#include <doctest.h>

#include <cmath>

#include "attnguide/rng.hpp"
#include "attnguide/schedule.hpp"

using namespace attnguide;

TEST_CASE("build_schedule values and invariants") {
    NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-12));
    for (size_t t = 1; t < s.t_train; ++t) {
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.betas[t] >= s.betas[t - 1]);
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
    }
    CHECK(s.alpha_bar.front() > 0.99);
    CHECK(s.alpha_bar.back() < 0.01);

    // Independent cumulative-product recomputation in long double.
    long double prod = 1.0L;
    for (size_t t = 0; t < 1000; ++t) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t) / 999.0L;
        prod *= (1.0L - beta);
    }
    CHECK(s.alpha_bar[999] == doctest::Approx(static_cast<double>(prod)).epsilon(1e-10));

    CHECK_THROWS_AS(build_schedule(1, 1e-4, 0.02), ParameterError);
    CHECK_THROWS_AS(build_schedule(1000, 0.0, 0.02), ParameterError);
    CHECK_THROWS_AS(build_schedule(1000, 0.03, 0.02), ParameterError);
    CHECK_THROWS_AS(build_schedule(1000, 1e-4, 1.0), ParameterError);
}

TEST_CASE("forward_diffuse mixes per the schedule") {
    Rng rng(5);
    Tensor<double> x0 = Tensor<double>::randn({4, 4, 3}, rng);
    Tensor<double> eps = Tensor<double>::randn({4, 4, 3}, rng);

    // Degenerate mixing coefficients.
    Tensor<double> same = diffuse_with(x0, eps, 1.0);
    CHECK(same.data() == x0.data());
    Tensor<double> noise = diffuse_with(x0, eps, 0.0);
    CHECK(noise.data() == eps.data());

    NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
    Tensor<double> mixed = forward_diffuse(x0, 500, eps, s);
    const double a = std::sqrt(s.alpha_bar[500]);
    const double b = std::sqrt(1.0 - s.alpha_bar[500]);
    for (size_t i = 0; i < mixed.numel(); ++i)
        CHECK(mixed[i] == doctest::Approx(a * x0[i] + b * eps[i]).epsilon(1e-12));

    CHECK_THROWS_AS(forward_diffuse(x0, 1000, eps, s), ParameterError);
    Tensor<double> wrong = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_AS(forward_diffuse(x0, 10, wrong, s), DimensionError);
}
