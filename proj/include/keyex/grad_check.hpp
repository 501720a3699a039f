#pragma once

// Central finite-difference verification of autodiff gradients. The function
// under test must be deterministic: it is re-evaluated twice per perturbed
// input element.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "keyex/rng.hpp"
#include "keyex/tensor.hpp"

namespace keyex {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    int64_t checks = 0;
    std::string worst_location;

    bool passed() const { return checks > 0 && max_rel_error <= tolerance; }
};

using TensorFn = std::function<Tensor(std::span<const Tensor>)>;

namespace detail {

// Non-scalar outputs are reduced by a fixed pseudo-random projection so that
// every output component contributes to the checked scalar.
inline double projected_value(const Tensor& out, const std::vector<double>& proj) {
    double acc = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) acc += proj[static_cast<size_t>(i)] * out.at(i);
    return acc;
}

}  // namespace detail

inline GradCheckReport grad_check(const TensorFn& fn, std::vector<Tensor> inputs,
                                  double tolerance = 1e-5, double step = 1e-5) {
    GradCheckReport report;
    report.tolerance = tolerance;

    Tensor probe = fn(inputs);
    std::vector<double> proj(static_cast<size_t>(probe.size()), 1.0);
    if (probe.size() > 1) {
        Rng proj_rng(0x9e3779b97f4a7c15ull);
        for (double& w : proj) w = proj_rng.uniform(-1.0, 1.0);
    }

    for (Tensor& t : inputs) t.zero_grad();
    Tensor out = fn(inputs);
    Tensor loss = probe.size() > 1
                      ? sum(mul(out, Tensor::of(out.shape(), proj)))
                      : out;
    loss.backward();

    const auto eval = [&]() {
        NoGradGuard guard;
        return detail::projected_value(fn(inputs), proj);
    };

    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        if (!t.requires_grad()) continue;
        const std::vector<double> analytic =
            t.has_grad() ? t.grad() : std::vector<double>(static_cast<size_t>(t.size()), 0.0);
        for (int64_t i = 0; i < t.size(); ++i) {
            const double original = t.at(i);
            t.at(i) = original + step;
            const double plus = eval();
            t.at(i) = original - step;
            const double minus = eval();
            t.at(i) = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double a = analytic[static_cast<size_t>(i)];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++report.checks;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_location =
                    "input " + std::to_string(ti) + " element " + std::to_string(i);
            }
        }
    }
    return report;
}

}  // namespace keyex
