#include <catch2/catch.hpp>

#include <cmath>

#include "keyex/adam.hpp"

using namespace keyex;

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    Tensor p = Tensor::of({3}, {1.0, -2.0, 0.5}, true);
    p.mutable_grad();  // allocated, all zero
    Adam opt({p});
    opt.step();
    opt.step();
    CHECK(p.at(0) == 1.0);
    CHECK(p.at(1) == -2.0);
    CHECK(p.at(2) == 0.5);
}

TEST_CASE("adam first step moves by roughly lr times sign of gradient") {
    Tensor p = Tensor::of({1}, {1.0}, true);
    p.mutable_grad()[0] = 1.0;
    Adam opt({p}, {.learning_rate = 1e-3});
    opt.step();
    CHECK(opt.step_count() == 1);
    // mhat = vhat = 1 on step one, so the update is lr/(1+eps)
    CHECK(p.at(0) == Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(p.at(0) == Approx(0.999).margin(1e-6));
}

TEST_CASE("adam follows the reference recurrences over several steps") {
    Tensor p = Tensor::of({1}, {0.3}, true);
    AdamConfig cfg;
    Adam opt({p}, cfg);
    // reference implementation tracked by hand
    double x = 0.3, m = 0.0, v = 0.0;
    const double grads[] = {0.5, -0.25, 0.1, 0.9};
    for (int t = 1; t <= 4; ++t) {
        const double g = grads[t - 1];
        p.zero_grad();
        p.mutable_grad()[0] = g;
        opt.step();
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mhat = m / (1 - std::pow(cfg.beta1, t));
        const double vhat = v / (1 - std::pow(cfg.beta2, t));
        x -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        CHECK(p.at(0) == Approx(x).epsilon(1e-14));
    }
}

TEST_CASE("adam is deterministic across identical runs") {
    auto run = []() {
        Tensor p = Tensor::of({2}, {0.7, -0.1}, true);
        Adam opt({p});
        for (int i = 0; i < 10; ++i) {
            p.zero_grad();
            p.mutable_grad()[0] = 0.01 * i;
            p.mutable_grad()[1] = -0.02 * i;
            opt.step();
        }
        return std::make_pair(p.at(0), p.at(1));
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("adam rejects non-finite gradients") {
    Tensor p = Tensor::of({1}, {1.0}, true);
    p.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    Adam opt({p});
    CHECK_THROWS_AS(opt.step(), NumericError);
}
