#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "keyex/nn.hpp"
#include "keyex/rng.hpp"

using namespace keyex;

namespace {

// Direct evaluation of exp(s_i/tau)/sum, independent of the library path.
std::vector<double> softmax_oracle(const std::vector<double>& s, double tau) {
    std::vector<double> out(s.size());
    double total = 0.0;
    for (size_t i = 0; i < s.size(); ++i) total += std::exp(s[i] / tau);
    for (size_t i = 0; i < s.size(); ++i) out[i] = std::exp(s[i] / tau) / total;
    return out;
}

}  // namespace

TEST_CASE("softmax_temp matches closed-form values") {
    SECTION("symmetric scores") {
        Tensor p = softmax_temp(Tensor::of({3}, {5, 5, 5}), 1.0);
        for (int i = 0; i < 3; ++i) CHECK(p.at(i) == Approx(1.0 / 3.0));
    }
    SECTION("1,2,3 at tau=1") {
        Tensor p = softmax_temp(Tensor::of({3}, {1, 2, 3}), 1.0);
        auto expect = softmax_oracle({1, 2, 3}, 1.0);
        CHECK(p.at(0) == Approx(expect[0]));
        CHECK(p.at(1) == Approx(expect[1]));
        CHECK(p.at(2) == Approx(expect[2]));
        CHECK(p.at(0) == Approx(0.0900).margin(1e-4));
        CHECK(p.at(1) == Approx(0.2447).margin(1e-4));
        CHECK(p.at(2) == Approx(0.6652).margin(1e-4));
    }
    SECTION("low temperature approaches one-hot") {
        Tensor p = softmax_temp(Tensor::of({3}, {1, 2, 3}), 0.1);
        CHECK(p.at(2) > 0.9999);
    }
    SECTION("tau must be positive") {
        CHECK_THROWS_AS(softmax_temp(Tensor::of({2}, {1, 2}), 0.0), ValidationError);
        CHECK_THROWS_AS(softmax_temp(Tensor::of({2}, {1, 2}), -1.0), ValidationError);
    }
}

TEST_CASE("softmax_temp distribution properties") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(7));
        std::vector<double> s(static_cast<size_t>(n));
        for (auto& v : s) v = rng.uniform(-4, 4);
        const double tau = std::exp(rng.uniform(std::log(0.05), std::log(4.0)));
        Tensor p = softmax_temp(Tensor::of({n}, s), tau);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            total += p.at(i);
            CHECK(p.at(i) > 0.0);
            CHECK(p.at(i) < 1.0 + 1e-12);
        }
        CHECK(total == Approx(1.0).margin(1e-9));
        // argmax preserved under any tau and under constant shifts
        const auto arg_in = std::distance(s.begin(), std::max_element(s.begin(), s.end()));
        const auto pv = p.values();
        const auto arg_out = std::distance(pv.begin(), std::max_element(pv.begin(), pv.end()));
        CHECK(arg_in == arg_out);
        std::vector<double> shifted(s);
        for (auto& v : shifted) v += 17.5;
        Tensor p2 = softmax_temp(Tensor::of({n}, shifted), tau);
        for (int i = 0; i < n; ++i) CHECK(p2.at(i) == Approx(p.at(i)).margin(1e-9));
    }
}

TEST_CASE("softmax_temp max probability is non-increasing in tau") {
    Tensor s = Tensor::of({4}, {0.3, -1.2, 2.0, 0.9});
    double prev = 1.0;
    for (double tau : {0.05, 0.1, 0.5, 1.0, 2.0, 8.0}) {
        Tensor p = softmax_temp(s, tau);
        double maxp = 0.0;
        for (int i = 0; i < 4; ++i) maxp = std::max(maxp, p.at(i));
        CHECK(maxp <= prev + 1e-12);
        prev = maxp;
    }
}

TEST_CASE("l2_normalize") {
    SECTION("3-4-5 triangle") {
        Tensor y = l2_normalize(Tensor::of({2}, {3, 4}));
        CHECK(y.at(0) == Approx(0.6));
        CHECK(y.at(1) == Approx(0.8));
    }
    SECTION("axis vector") {
        Tensor y = l2_normalize(Tensor::of({3}, {0, 0, 7}));
        CHECK(y.at(2) == Approx(1.0));
    }
    SECTION("unit diagonal") {
        Tensor y = l2_normalize(Tensor::of({2}, {1, 1}));
        CHECK(y.at(0) == Approx(1.0 / std::sqrt(2.0)).margin(1e-4));
    }
    SECTION("zero vector is an error") {
        CHECK_THROWS_AS(l2_normalize(Tensor::zeros({3})), NumericError);
    }
    SECTION("unit norm and direction preservation for random inputs") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> v(5);
            for (auto& x : v) x = rng.uniform(-10, 10);
            Tensor y = l2_normalize(Tensor::of({5}, v));
            double norm = 0.0;
            for (int i = 0; i < 5; ++i) norm += y.at(i) * y.at(i);
            CHECK(std::sqrt(norm) == Approx(1.0).margin(1e-9));
            // output is a positive multiple of the input
            for (int i = 0; i < 5; ++i) CHECK(y.at(i) * v[static_cast<size_t>(i)] >= 0.0);
        }
    }
}

TEST_CASE("layer_norm") {
    SECTION("already standardized") {
        Tensor y = layer_norm(Tensor::of({2}, {1, -1}), Tensor::of({2}, {1, 1}),
                              Tensor::of({2}, {0, 0}));
        CHECK(y.at(0) == Approx(1.0).margin(1e-2));  // epsilon shifts slightly
        CHECK(y.at(1) == Approx(-1.0).margin(1e-2));
    }
    SECTION("constant vector maps to bias") {
        Tensor y = layer_norm(Tensor::of({3}, {2, 2, 2}), Tensor::of({3}, {1, 1, 1}),
                              Tensor::of({3}, {0, 0, 0}));
        for (int i = 0; i < 3; ++i) CHECK(y.at(i) == Approx(0.0).margin(1e-9));
    }
    SECTION("hand computation") {
        Tensor y = layer_norm(Tensor::of({2}, {0, 2}), Tensor::of({2}, {2, 2}),
                              Tensor::of({2}, {1, 1}));
        CHECK(y.at(0) == Approx(-1.0).margin(1e-4));
        CHECK(y.at(1) == Approx(3.0).margin(1e-4));
    }
    SECTION("single element rejected") {
        CHECK_THROWS_AS(layer_norm(Tensor::of({1}, {1}), Tensor::of({1}, {1}),
                                   Tensor::of({1}, {0})),
                        DimensionError);
    }
    SECTION("pre-affine output has zero mean, unit variance") {
        Rng rng(5);
        std::vector<double> v(8);
        for (auto& x : v) x = rng.uniform(-3, 3);
        Tensor y = layer_norm(Tensor::of({8}, v), Tensor::full({8}, 1.0), Tensor::zeros({8}));
        double mean = 0.0;
        for (int i = 0; i < 8; ++i) mean += y.at(i);
        mean /= 8;
        CHECK(mean == Approx(0.0).margin(1e-9));
        double var = 0.0;
        for (int i = 0; i < 8; ++i) var += (y.at(i) - mean) * (y.at(i) - mean);
        var /= 8;
        CHECK(var == Approx(1.0).margin(1e-4));
    }
}

TEST_CASE("cross_entropy closed forms") {
    SECTION("uniform two-way prediction") {
        Tensor loss = cross_entropy(Tensor::of({2}, {0, 0}), Tensor::of({2}, {1, 0}));
        CHECK(loss.value() == Approx(std::log(2.0)));
    }
    SECTION("confident correct prediction") {
        Tensor loss = cross_entropy(Tensor::of({2}, {10, -10}), Tensor::of({2}, {1, 0}));
        CHECK(loss.value() < 1e-4);
        CHECK(loss.value() >= 0.0);
    }
    SECTION("uniform four-way") {
        Tensor loss =
            cross_entropy(Tensor::of({4}, {0, 0, 0, 0}), Tensor::full({4}, 0.25));
        CHECK(loss.value() == Approx(std::log(4.0)));
    }
    SECTION("invalid target distribution") {
        CHECK_THROWS_AS(cross_entropy(Tensor::of({2}, {0, 0}), Tensor::of({2}, {0.7, 0.7})),
                        ValidationError);
        CHECK_THROWS_AS(cross_entropy(Tensor::of({2}, {0, 0}), Tensor::of({2}, {1.5, -0.5})),
                        ValidationError);
    }
    SECTION("non-negative for one-hot targets") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> logits(6);
            for (auto& v : logits) v = rng.uniform(-8, 8);
            Tensor loss = cross_entropy_onehot(Tensor::of({6}, logits),
                                               static_cast<int>(rng.uniform_int(6)));
            CHECK(loss.value() >= 0.0);
        }
    }
}

TEST_CASE("lstm cell") {
    SECTION("zero weights and biases give zero state") {
        LstmParams p;
        p.input_dim = 3;
        p.hidden_dim = 2;
        p.w_ih = Tensor::zeros({8, 3}, true);
        p.w_hh = Tensor::zeros({8, 2}, true);
        p.b = Tensor::zeros({8}, true);
        auto out = lstm_cell_step(Tensor::of({3}, {1, -2, 3}), lstm_initial_state(2), p);
        for (int i = 0; i < 2; ++i) {
            CHECK(out.h.at(i) == Approx(0.0));
            CHECK(out.c.at(i) == Approx(0.0));
        }
    }
    SECTION("saturated gates carry the cell state") {
        LstmParams p;
        p.input_dim = 1;
        p.hidden_dim = 1;
        p.w_ih = Tensor::zeros({4, 1});
        p.w_hh = Tensor::zeros({4, 1});
        // forget gate saturated open, input gate saturated closed
        p.b = Tensor::of({4}, {-50.0, 50.0, 0.0, 0.0});
        LstmState prev{Tensor::of({1}, {0.0}), Tensor::of({1}, {0.7})};
        auto out = lstm_cell_step(Tensor::of({1}, {0.3}), prev, p);
        CHECK(out.c.at(0) == Approx(0.7).margin(1e-9));
    }
    SECTION("one-unit cell matches manual gate arithmetic") {
        LstmParams p;
        p.input_dim = 1;
        p.hidden_dim = 1;
        const double wi = 0.5, wf = -0.3, wg = 0.8, wo = 0.2;
        const double ui = 0.1, uf = 0.4, ug = -0.6, uo = 0.9;
        const double bi = 0.05, bf = 1.0, bg = -0.2, bo = 0.3;
        p.w_ih = Tensor::of({4, 1}, {wi, wf, wg, wo});
        p.w_hh = Tensor::of({4, 1}, {ui, uf, ug, uo});
        p.b = Tensor::of({4}, {bi, bf, bg, bo});
        const double x = 0.7, hp = -0.4, cp = 0.25;
        auto out = lstm_cell_step(Tensor::of({1}, {x}), {Tensor::of({1}, {hp}), Tensor::of({1}, {cp})}, p);

        auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
        const double gi = sig(wi * x + ui * hp + bi);
        const double gf = sig(wf * x + uf * hp + bf);
        const double gg = std::tanh(wg * x + ug * hp + bg);
        const double go = sig(wo * x + uo * hp + bo);
        const double c = gf * cp + gi * gg;
        const double h = go * std::tanh(c);
        CHECK(out.c.at(0) == Approx(c).margin(1e-10));
        CHECK(out.h.at(0) == Approx(h).margin(1e-10));
    }
    SECTION("shape mismatch") {
        Rng rng(1);
        LstmParams p = init_lstm(3, 2, rng);
        CHECK_THROWS_AS(lstm_cell_step(Tensor::of({2}, {1, 2}), lstm_initial_state(2), p),
                        DimensionError);
    }
    SECTION("init uses forget-bias one and bounded weights") {
        Rng rng(9);
        LstmParams p = init_lstm(4, 3, rng);
        for (double v : p.w_ih.values()) CHECK(std::abs(v) <= 0.08);
        for (int i = 0; i < 3; ++i) CHECK(p.b.at(i) == 0.0);
        for (int i = 3; i < 6; ++i) CHECK(p.b.at(i) == 1.0);
        for (int i = 6; i < 12; ++i) CHECK(p.b.at(i) == 0.0);
    }
}
