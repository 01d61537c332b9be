#include <doctest.h>

#include <cmath>
#include <limits>

#include "hada/optim.hpp"

using namespace hada;

TEST_CASE("adamw: zero grads and zero decay leave params unchanged") {
    ParamSet params{{"w", Tensor::vector({1.0, -2.0})}};
    GradSet grads{{"w", Tensor::vector({0.0, 0.0})}};
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    opt.step(params, grads, 0.1);
    CHECK(params.at("w").data == std::vector<double>{1.0, -2.0});
}

TEST_CASE("adamw: first step with g=1 moves by ~lr") {
    // hand-computed: m_hat = v_hat = 1 after bias correction, so the update
    // is lr / (1 + eps) ~= lr
    ParamSet params{{"w", Tensor::scalar(0.5)}};
    GradSet grads{{"w", Tensor::scalar(1.0)}};
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    opt.step(params, grads, 0.1);
    CHECK(params.at("w").item() == doctest::Approx(0.5 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adamw: decay-only step") {
    ParamSet params{{"w", Tensor::scalar(1.0)}};
    GradSet grads{{"w", Tensor::scalar(0.0)}};
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.02});
    opt.step(params, grads, 0.1);
    CHECK(params.at("w").item() == doctest::Approx(0.998).epsilon(1e-12));
}

TEST_CASE("adamw: NaN gradient aborts naming the parameter and step") {
    ParamSet params{{"bad", Tensor::scalar(1.0)}};
    GradSet grads{{"bad", Tensor::scalar(std::numeric_limits<double>::quiet_NaN())}};
    AdamW opt;
    CHECK_THROWS_WITH_AS(opt.step(params, grads, 0.1), doctest::Contains("bad"), NumericError);
}

TEST_CASE("adamw: step counter increments once per update") {
    ParamSet params{{"w", Tensor::scalar(1.0)}};
    GradSet grads{{"w", Tensor::scalar(0.1)}};
    AdamW opt;
    for (int i = 1; i <= 5; ++i) {
        opt.step(params, grads, 1e-3);
        CHECK(opt.step_count() == i);
    }
}

TEST_CASE("cosine_lr endpoints and midpoint") {
    CosineSchedule s{1e-4, 5e-6, 100};
    CHECK(cosine_lr(s, 0) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(cosine_lr(s, 100) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(cosine_lr(s, 50) == doctest::Approx((1e-4 + 5e-6) / 2.0).epsilon(1e-12));
}

TEST_CASE("cosine_lr is non-increasing and clamps out-of-range steps") {
    CosineSchedule s{1e-4, 5e-6, 37};
    double prev = cosine_lr(s, 0);
    for (long step = 1; step <= 37; ++step) {
        double lr = cosine_lr(s, step);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK(cosine_lr(s, 1000) == doctest::Approx(5e-6));
    CHECK(cosine_lr(s, -4) == doctest::Approx(1e-4));
}
