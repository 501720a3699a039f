#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
// A Tensor is a cheap handle onto a shared node; differentiable operations
// record their inputs and a backward closure onto the node, and backward()
// replays the recorded graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "keyex/errors.hpp"

namespace keyex {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

// Graph recording can be suspended for pure inference paths.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() : previous(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    bool previous;
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), {}, requires_grad, 0.0);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        return Tensor(std::move(shape), {}, requires_grad, value);
    }

    static Tensor of(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
            throw DimensionError("value count does not match shape " + shape_str(shape));
        }
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return of({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->values.size()); }

    // Rank-2 accessors; rows × cols, row-major.
    int rows() const { return dim(0); }
    int cols() const { return dim(1); }

    double value() const {
        if (size() != 1) throw DimensionError("value() requires a single-element tensor");
        return node_->values[0];
    }

    double at(int64_t i) const { return node_->values[static_cast<size_t>(i)]; }
    double& at(int64_t i) { return node_->values[static_cast<size_t>(i)]; }
    double at2(int r, int c) const { return node_->values[static_cast<size_t>(r) * cols() + c]; }
    double& at2(int r, int c) { return node_->values[static_cast<size_t>(r) * cols() + c]; }

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& values() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) throw ValidationError("tensor has no gradient buffer");
        return node_->grad;
    }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Same values, no recorded history, does not require grad.
    Tensor detach() const {
        return Tensor(node_->shape, node_->values, false);
    }

    // Deep copy of values and requires_grad; history is not copied.
    Tensor clone() const {
        return Tensor(node_->shape, node_->values, node_->requires_grad);
    }

    // Seeds d(self)/d(self) = 1 and propagates through the recorded graph.
    void backward() {
        if (size() != 1) throw DimensionError("backward() requires a scalar tensor");
        std::vector<detail::Node*> order = topo_order();
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  private:
    Tensor(Shape shape, std::vector<double> values, bool requires_grad, double fill = 0.0) {
        node_ = std::make_shared<detail::Node>();
        const auto n = static_cast<size_t>(shape_numel(shape));
        node_->shape = std::move(shape);
        if (values.empty()) {
            node_->values.assign(n, fill);
        } else {
            node_->values = std::move(values);
        }
        node_->requires_grad = requires_grad;
    }

    std::vector<detail::Node*> topo_order() const {
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> done;
        std::vector<std::pair<detail::Node*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        while (!stack.empty()) {
            auto& [n, next_child] = stack.back();
            if (done.count(n)) {
                stack.pop_back();
                continue;
            }
            if (next_child < n->parents.size()) {
                detail::Node* child = n->parents[next_child++].get();
                if (!done.count(child)) stack.emplace_back(child, 0);
            } else {
                done.insert(n);
                order.push_back(n);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in result");
        }
    }
}

// Builds the result node; parents/backward are recorded only when some input
// participates in differentiation and grad mode is on.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward, const char* op) {
    check_finite(values, op);
    bool track = grad_mode() &&
                 std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return t.requires_grad(); });
    Tensor out = Tensor::of(std::move(shape), std::move(values), track);
    if (track) {
        auto& node = out.node();
        node.parents.reserve(inputs.size());
        for (const Tensor& t : inputs) node.parents.push_back(t.node_ptr());
        node.backward = std::move(backward);
    }
    return out;
}

inline void accumulate(Node& target, const std::vector<double>& delta) {
    target.ensure_grad();
    for (size_t i = 0; i < delta.size(); ++i) target.grad[i] += delta[i];
}

}  // namespace detail

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.values());
    for (int64_t i = 0; i < b.size(); ++i) out[static_cast<size_t>(i)] += b.at(i);
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a, b},
        [an, bn](detail::Node& self) {
            if (an->requires_grad) detail::accumulate(*an, self.grad);
            if (bn->requires_grad) detail::accumulate(*bn, self.grad);
        },
        "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.values());
    for (int64_t i = 0; i < b.size(); ++i) out[static_cast<size_t>(i)] -= b.at(i);
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a, b},
        [an, bn](detail::Node& self) {
            if (an->requires_grad) detail::accumulate(*an, self.grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.values());
    for (int64_t i = 0; i < b.size(); ++i) out[static_cast<size_t>(i)] *= b.at(i);
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a, b},
        [an, bn](detail::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->values[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->values[i];
            }
        },
        "mul");
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values());
    for (double& v : out) v *= factor;
    auto an = a.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a},
        [an, factor](detail::Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += factor * self.grad[i];
        },
        "scale");
}

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    auto an = a.node_ptr();
    return detail::make_result(
        {1}, {total}, {a},
        [an](detail::Node& self) {
            an->ensure_grad();
            for (double& g : an->grad) g += self.grad[0];
        },
        "sum");
}

inline Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw ValidationError("concat: no inputs");
    std::vector<double> out;
    std::vector<Tensor> inputs;
    std::vector<std::pair<std::shared_ptr<detail::Node>, size_t>> spans;
    for (const Tensor& t : parts) {
        if (t.rank() != 1) throw DimensionError("concat: rank-1 tensors only");
        spans.emplace_back(t.node_ptr(), out.size());
        out.insert(out.end(), t.values().begin(), t.values().end());
        inputs.push_back(t);
    }
    Shape shape{static_cast<int>(out.size())};
    return detail::make_result(
        std::move(shape), std::move(out), std::move(inputs),
        [spans](detail::Node& self) {
            for (const auto& [pn, offset] : spans) {
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                for (size_t i = 0; i < pn->values.size(); ++i)
                    pn->grad[i] += self.grad[offset + i];
            }
        },
        "concat");
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat(std::span<const Tensor>(parts, 2));
}

inline Tensor concat(const Tensor& a, const Tensor& b, const Tensor& c) {
    const Tensor parts[] = {a, b, c};
    return concat(std::span<const Tensor>(parts, 3));
}

inline Tensor slice(const Tensor& a, int start, int len) {
    if (a.rank() != 1) throw DimensionError("slice: rank-1 tensors only");
    if (start < 0 || len <= 0 || start + len > a.dim(0)) {
        throw DimensionError("slice: range out of bounds");
    }
    std::vector<double> out(a.values().begin() + start, a.values().begin() + start + len);
    auto an = a.node_ptr();
    return detail::make_result(
        {len}, std::move(out), {a},
        [an, start](detail::Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[static_cast<size_t>(start) + i] += self.grad[i];
        },
        "slice");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// m[r×c] · x[c] -> [r]
inline Tensor matvec(const Tensor& m, const Tensor& x) {
    if (m.rank() != 2 || x.rank() != 1 || m.cols() != x.dim(0)) {
        throw DimensionError("matvec: incompatible shapes " + shape_str(m.shape()) + " · " +
                             shape_str(x.shape()));
    }
    const int r = m.rows(), c = m.cols();
    std::vector<double> out(static_cast<size_t>(r), 0.0);
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        const double* row = m.values().data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) acc += row[j] * x.at(j);
        out[static_cast<size_t>(i)] = acc;
    }
    auto mn = m.node_ptr();
    auto xn = x.node_ptr();
    return detail::make_result(
        {r}, std::move(out), {m, x},
        [mn, xn, r, c](detail::Node& self) {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const double g = self.grad[static_cast<size_t>(i)];
                    double* grow = mn->grad.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) grow[j] += g * xn->values[static_cast<size_t>(j)];
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const double g = self.grad[static_cast<size_t>(i)];
                    const double* row = mn->values.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) xn->grad[static_cast<size_t>(j)] += g * row[j];
                }
            }
        },
        "matvec");
}

// weight[m×n] · input[n] + bias[m]
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != weight.rows()) {
        throw DimensionError("linear: bias shape does not match weight rows");
    }
    return add(matvec(weight, input), bias);
}

inline Tensor linear(const Tensor& input, const Tensor& weight) {
    return matvec(weight, input);
}

// Applies w[h×d]·row + b[h] to every row of m[n×d] -> [n×h].
inline Tensor rows_linear(const Tensor& m, const Tensor& w, const Tensor& b) {
    if (m.rank() != 2 || w.rank() != 2 || b.rank() != 1 || m.cols() != w.cols() ||
        b.dim(0) != w.rows()) {
        throw DimensionError("rows_linear: incompatible shapes");
    }
    const int n = m.rows(), d = m.cols(), h = w.rows();
    std::vector<double> out(static_cast<size_t>(n) * h, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = m.values().data() + static_cast<size_t>(i) * d;
        for (int k = 0; k < h; ++k) {
            const double* wrow = w.values().data() + static_cast<size_t>(k) * d;
            double acc = b.at(k);
            for (int j = 0; j < d; ++j) acc += wrow[j] * row[j];
            out[static_cast<size_t>(i) * h + k] = acc;
        }
    }
    auto mn = m.node_ptr();
    auto wn = w.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result(
        {n, h}, std::move(out), {m, w, b},
        [mn, wn, bn, n, d, h](detail::Node& self) {
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<size_t>(i) * h;
                const double* row = mn->values.data() + static_cast<size_t>(i) * d;
                if (wn->requires_grad) {
                    wn->ensure_grad();
                    for (int k = 0; k < h; ++k) {
                        double* gw = wn->grad.data() + static_cast<size_t>(k) * d;
                        for (int j = 0; j < d; ++j) gw[j] += g[k] * row[j];
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int k = 0; k < h; ++k) bn->grad[static_cast<size_t>(k)] += g[k];
                }
                if (mn->requires_grad) {
                    mn->ensure_grad();
                    double* gm = mn->grad.data() + static_cast<size_t>(i) * d;
                    for (int k = 0; k < h; ++k) {
                        const double* wrow = wn->values.data() + static_cast<size_t>(k) * d;
                        for (int j = 0; j < d; ++j) gm[j] += g[k] * wrow[j];
                    }
                }
            }
        },
        "rows_linear");
}

// Σ_i p[i] · v[i,:] -> [h]
inline Tensor weighted_row_sum(const Tensor& v, const Tensor& p) {
    if (v.rank() != 2 || p.rank() != 1 || v.rows() != p.dim(0)) {
        throw DimensionError("weighted_row_sum: incompatible shapes");
    }
    const int n = v.rows(), h = v.cols();
    std::vector<double> out(static_cast<size_t>(h), 0.0);
    for (int i = 0; i < n; ++i) {
        const double w = p.at(i);
        const double* row = v.values().data() + static_cast<size_t>(i) * h;
        for (int j = 0; j < h; ++j) out[static_cast<size_t>(j)] += w * row[j];
    }
    auto vn = v.node_ptr();
    auto pn = p.node_ptr();
    return detail::make_result(
        {h}, std::move(out), {v, p},
        [vn, pn, n, h](detail::Node& self) {
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double w = pn->values[static_cast<size_t>(i)];
                    double* gv = vn->grad.data() + static_cast<size_t>(i) * h;
                    for (int j = 0; j < h; ++j) gv[j] += w * self.grad[static_cast<size_t>(j)];
                }
            }
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double* row = vn->values.data() + static_cast<size_t>(i) * h;
                    double acc = 0.0;
                    for (int j = 0; j < h; ++j) acc += row[j] * self.grad[static_cast<size_t>(j)];
                    pn->grad[static_cast<size_t>(i)] += acc;
                }
            }
        },
        "weighted_row_sum");
}

inline Tensor pick_row(const Tensor& table, int row) {
    if (table.rank() != 2) throw DimensionError("pick_row: rank-2 table required");
    if (row < 0 || row >= table.rows()) throw DimensionError("pick_row: row out of range");
    const int d = table.cols();
    std::vector<double> out(table.values().begin() + static_cast<size_t>(row) * d,
                            table.values().begin() + static_cast<size_t>(row + 1) * d);
    auto tn = table.node_ptr();
    return detail::make_result(
        {d}, std::move(out), {table},
        [tn, row, d](detail::Node& self) {
            tn->ensure_grad();
            double* g = tn->grad.data() + static_cast<size_t>(row) * d;
            for (int j = 0; j < d; ++j) g[j] += self.grad[static_cast<size_t>(j)];
        },
        "pick_row");
}

inline Tensor pick_rows(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) throw DimensionError("pick_rows: rank-2 table required");
    if (ids.empty()) throw ValidationError("pick_rows: empty id list");
    const int d = table.cols();
    std::vector<double> out;
    out.reserve(ids.size() * static_cast<size_t>(d));
    for (int id : ids) {
        if (id < 0 || id >= table.rows()) throw DimensionError("pick_rows: id out of range");
        out.insert(out.end(), table.values().begin() + static_cast<size_t>(id) * d,
                   table.values().begin() + static_cast<size_t>(id + 1) * d);
    }
    auto tn = table.node_ptr();
    std::vector<int> id_copy(ids.begin(), ids.end());
    return detail::make_result(
        {static_cast<int>(ids.size()), d}, std::move(out), {table},
        [tn, id_copy, d](detail::Node& self) {
            tn->ensure_grad();
            for (size_t i = 0; i < id_copy.size(); ++i) {
                double* g = tn->grad.data() + static_cast<size_t>(id_copy[i]) * d;
                const double* s = self.grad.data() + i * static_cast<size_t>(d);
                for (int j = 0; j < d; ++j) g[j] += s[j];
            }
        },
        "pick_rows");
}

// m[n×d] + positions[0..n) of p[max_len×d]; n must not exceed max_len.
inline Tensor add_position_rows(const Tensor& m, const Tensor& p) {
    if (m.rank() != 2 || p.rank() != 2 || m.cols() != p.cols() || m.rows() > p.rows()) {
        throw DimensionError("add_position_rows: incompatible shapes");
    }
    const int n = m.rows(), d = m.cols();
    std::vector<double> out(m.values());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            out[static_cast<size_t>(i) * d + j] += p.at2(i, j);
        }
    }
    auto mn = m.node_ptr();
    auto pn = p.node_ptr();
    return detail::make_result(
        {n, d}, std::move(out), {m, p},
        [mn, pn, n, d](detail::Node& self) {
            if (mn->requires_grad) detail::accumulate(*mn, self.grad);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < d; ++j) {
                        pn->grad[static_cast<size_t>(i) * d + j] +=
                            self.grad[static_cast<size_t>(i) * d + j];
                    }
                }
            }
        },
        "add_position_rows");
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.values());
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    auto an = a.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a},
        [an](detail::Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.values[i];
                an->grad[i] += self.grad[i] * y * (1.0 - y);
            }
        },
        "sigmoid");
}

inline Tensor tanh_act(const Tensor& a) {
    std::vector<double> out(a.values());
    for (double& v : out) v = std::tanh(v);
    auto an = a.node_ptr();
    return detail::make_result(
        a.shape(), std::move(out), {a},
        [an](detail::Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.values[i];
                an->grad[i] += self.grad[i] * (1.0 - y * y);
            }
        },
        "tanh");
}

}  // namespace keyex
