#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "keyex/tensor.hpp"

namespace keyex {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moment buffers are keyed
// by parameter order; step_count advances by one per step() call. A zero
// gradient with zero moments leaves the parameter bit-identical.
class Adam {
  public:
    explicit Adam(std::vector<Tensor> params, AdamConfig config = {})
        : params_(std::move(params)), config_(config) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor& p : params_) {
            m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
            v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
        }
    }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi];
            const bool has_grad = p.has_grad();
            for (int64_t i = 0; i < p.size(); ++i) {
                const double g = has_grad ? p.grad()[static_cast<size_t>(i)] : 0.0;
                if (!std::isfinite(g)) {
                    throw NumericError("adam: non-finite gradient");
                }
                double& m = m_[pi][static_cast<size_t>(i)];
                double& v = v_[pi][static_cast<size_t>(i)];
                m = config_.beta1 * m + (1.0 - config_.beta1) * g;
                v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                p.at(i) -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
            }
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return config_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t step_count_ = 0;
    AdamConfig config_;
};

}  // namespace keyex
