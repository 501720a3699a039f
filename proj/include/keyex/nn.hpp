#pragma once

// Layer primitives built on the autograd tensor: temperature softmax,
// normalizations, cross-entropy against a target distribution, and an LSTM
// cell composed from the base operations.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "keyex/rng.hpp"
#include "keyex/tensor.hpp"

namespace keyex {

inline constexpr double kLayerNormEpsilon = 1e-5;

// softmax(scores / tau), computed with max-subtraction. Output sums to 1;
// tau -> 0 approaches a one-hot distribution at the argmax.
inline Tensor softmax_temp(const Tensor& scores, double tau) {
    if (!(tau > 0.0)) throw ValidationError("softmax_temp: tau must be positive");
    if (scores.rank() != 1 || scores.dim(0) < 1) {
        throw DimensionError("softmax_temp: nonempty rank-1 input required");
    }
    const int n = scores.dim(0);
    std::vector<double> out(static_cast<size_t>(n));
    double maxv = scores.at(0);
    for (int i = 1; i < n; ++i) maxv = std::max(maxv, scores.at(i));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = std::exp((scores.at(i) - maxv) / tau);
        total += out[static_cast<size_t>(i)];
    }
    for (double& v : out) v /= total;
    auto sn = scores.node_ptr();
    return detail::make_result(
        {n}, std::move(out), {scores},
        [sn, tau](detail::Node& self) {
            sn->ensure_grad();
            double dot = 0.0;
            for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.values[i];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                sn->grad[i] += self.values[i] * (self.grad[i] - dot) / tau;
            }
        },
        "softmax_temp");
}

inline Tensor softmax(const Tensor& scores) { return softmax_temp(scores, 1.0); }

// v / ||v||2. The zero vector is rejected: callers must guard degenerate
// encodings rather than silently producing zeros.
inline Tensor l2_normalize(const Tensor& v) {
    if (v.rank() != 1) throw DimensionError("l2_normalize: rank-1 input required");
    double sq = 0.0;
    for (double x : v.values()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw NumericError("l2_normalize: zero vector");
    std::vector<double> out(v.values());
    for (double& x : out) x /= norm;
    auto vn = v.node_ptr();
    return detail::make_result(
        v.shape(), std::move(out), {v},
        [vn, norm](detail::Node& self) {
            vn->ensure_grad();
            double dot = 0.0;
            for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.values[i];
            for (size_t i = 0; i < self.grad.size(); ++i) {
                vn->grad[i] += (self.grad[i] - self.values[i] * dot) / norm;
            }
        },
        "l2_normalize");
}

// Standardizes v to zero mean / unit population variance, then gain·x + bias.
inline Tensor layer_norm(const Tensor& v, const Tensor& gain, const Tensor& bias) {
    if (v.rank() != 1 || v.dim(0) < 2) {
        throw DimensionError("layer_norm: rank-1 input with at least 2 entries required");
    }
    check_same_shape(v, gain, "layer_norm");
    check_same_shape(v, bias, "layer_norm");
    const int n = v.dim(0);
    double mean = 0.0;
    for (double x : v.values()) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v.values()) var += (x - mean) * (x - mean);
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    std::vector<double> norm(static_cast<size_t>(n));
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        norm[static_cast<size_t>(i)] = (v.at(i) - mean) * rstd;
        out[static_cast<size_t>(i)] = gain.at(i) * norm[static_cast<size_t>(i)] + bias.at(i);
    }
    auto vn = v.node_ptr();
    auto gn = gain.node_ptr();
    auto bn = bias.node_ptr();
    return detail::make_result(
        {n}, std::move(out), {v, gain, bias},
        [vn, gn, bn, norm, rstd, n](detail::Node& self) {
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    gn->grad[static_cast<size_t>(i)] +=
                        self.grad[static_cast<size_t>(i)] * norm[static_cast<size_t>(i)];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    bn->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
                }
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                double mean_dn = 0.0, mean_dn_norm = 0.0;
                std::vector<double> dnorm(static_cast<size_t>(n));
                for (int i = 0; i < n; ++i) {
                    dnorm[static_cast<size_t>(i)] = self.grad[static_cast<size_t>(i)] *
                                                    gn->values[static_cast<size_t>(i)];
                    mean_dn += dnorm[static_cast<size_t>(i)];
                    mean_dn_norm += dnorm[static_cast<size_t>(i)] * norm[static_cast<size_t>(i)];
                }
                mean_dn /= n;
                mean_dn_norm /= n;
                for (int i = 0; i < n; ++i) {
                    vn->grad[static_cast<size_t>(i)] +=
                        rstd * (dnorm[static_cast<size_t>(i)] - mean_dn -
                                norm[static_cast<size_t>(i)] * mean_dn_norm);
                }
            }
        },
        "layer_norm");
}

// −Σ_i target[i] · log(softmax(logits)[i]). The target is a fixed probability
// distribution; gradients flow into the logits only.
inline Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
    check_same_shape(logits, target, "cross_entropy");
    if (logits.rank() != 1) throw DimensionError("cross_entropy: rank-1 inputs required");
    double tsum = 0.0;
    for (double t : target.values()) {
        if (t < 0.0) throw ValidationError("cross_entropy: target entries must be >= 0");
        tsum += t;
    }
    if (std::abs(tsum - 1.0) > 1e-6) {
        throw ValidationError("cross_entropy: target distribution must sum to 1");
    }
    const int n = logits.dim(0);
    double maxv = logits.at(0);
    for (int i = 1; i < n; ++i) maxv = std::max(maxv, logits.at(i));
    double expsum = 0.0;
    std::vector<double> probs(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        probs[static_cast<size_t>(i)] = std::exp(logits.at(i) - maxv);
        expsum += probs[static_cast<size_t>(i)];
    }
    const double lse = maxv + std::log(expsum);
    for (double& p : probs) p /= expsum;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss += target.at(i) * (lse - logits.at(i));
    auto ln = logits.node_ptr();
    auto tvals = target.values();
    return detail::make_result(
        {1}, {loss}, {logits},
        [ln, probs, tvals](detail::Node& self) {
            ln->ensure_grad();
            const double g = self.grad[0];
            for (size_t i = 0; i < probs.size(); ++i) {
                ln->grad[i] += g * (probs[i] - tvals[i]);
            }
        },
        "cross_entropy");
}

inline Tensor cross_entropy_onehot(const Tensor& logits, int target_index) {
    if (target_index < 0 || target_index >= logits.dim(0)) {
        throw ValidationError("cross_entropy_onehot: target index out of range");
    }
    Tensor target = Tensor::zeros(logits.shape());
    target.at(target_index) = 1.0;
    return cross_entropy(logits, target);
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

// uniform(−1/√fan_in, +1/√fan_in) for weights and biases.
inline Tensor init_linear_weight(int out_dim, int in_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Tensor w = Tensor::zeros({out_dim, in_dim}, true);
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    return w;
}

inline Tensor init_linear_bias(int out_dim, int in_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Tensor b = Tensor::zeros({out_dim}, true);
    for (auto& v : b.values()) v = rng.uniform(-bound, bound);
    return b;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

// Gate blocks are stacked [input, forget, candidate, output] along the first
// axis of w_ih/w_hh/b. Weights init uniform(−0.08, 0.08); forget bias +1.
struct LstmParams {
    Tensor w_ih;  // [4H × input_dim]
    Tensor w_hh;  // [4H × H]
    Tensor b;     // [4H]
    int input_dim = 0;
    int hidden_dim = 0;
};

inline LstmParams init_lstm(int input_dim, int hidden_dim, Rng& rng) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.w_ih = Tensor::zeros({4 * hidden_dim, input_dim}, true);
    p.w_hh = Tensor::zeros({4 * hidden_dim, hidden_dim}, true);
    for (auto& v : p.w_ih.values()) v = rng.uniform(-0.08, 0.08);
    for (auto& v : p.w_hh.values()) v = rng.uniform(-0.08, 0.08);
    p.b = Tensor::zeros({4 * hidden_dim}, true);
    for (int i = hidden_dim; i < 2 * hidden_dim; ++i) p.b.at(i) = 1.0;
    return p;
}

struct LstmState {
    Tensor h;
    Tensor c;
};

inline LstmState lstm_initial_state(int hidden_dim) {
    return {Tensor::zeros({hidden_dim}), Tensor::zeros({hidden_dim})};
}

inline LstmState lstm_cell_step(const Tensor& x, const LstmState& prev, const LstmParams& p) {
    if (x.rank() != 1 || x.dim(0) != p.input_dim) {
        throw DimensionError("lstm_cell_step: input shape mismatch");
    }
    if (prev.h.dim(0) != p.hidden_dim || prev.c.dim(0) != p.hidden_dim) {
        throw DimensionError("lstm_cell_step: state shape mismatch");
    }
    const int h = p.hidden_dim;
    Tensor z = add(add(matvec(p.w_ih, x), matvec(p.w_hh, prev.h)), p.b);
    Tensor gate_in = sigmoid(slice(z, 0, h));
    Tensor gate_forget = sigmoid(slice(z, h, h));
    Tensor candidate = tanh_act(slice(z, 2 * h, h));
    Tensor gate_out = sigmoid(slice(z, 3 * h, h));
    Tensor c = add(mul(gate_forget, prev.c), mul(gate_in, candidate));
    return {mul(gate_out, tanh_act(c)), c};
}

}  // namespace keyex
