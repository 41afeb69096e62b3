#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "numerics.hpp"

namespace gzsl {

/// Ordered (parameter id, gradient) pairs collected from one backward pass.
class GradTape {
public:
    void record(std::string id, Matrix grad) {
        require(!index_.contains(id), "grad tape: parameter '" + id + "' recorded twice");
        index_.emplace(id, entries_.size());
        entries_.emplace_back(std::move(id), std::move(grad));
    }

    [[nodiscard]] const Matrix& at(const std::string& id) const {
        auto it = index_.find(id);
        require(it != index_.end(), "grad tape: no parameter '" + id + "'");
        return entries_[it->second].second;
    }
    [[nodiscard]] bool contains(const std::string& id) const { return index_.contains(id); }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] const std::vector<std::pair<std::string, Matrix>>& entries() const noexcept { return entries_; }

private:
    std::vector<std::pair<std::string, Matrix>> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Fully connected map y = x * W + b, W is (in x out).
struct Linear {
    Matrix weight;
    Matrix bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

    [[nodiscard]] std::size_t in_dim() const noexcept { return weight.rows(); }
    [[nodiscard]] std::size_t out_dim() const noexcept { return weight.cols(); }

    template <class Self, class F>
    static void for_each_param(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "weight", self.weight);
        f(prefix + "bias", self.bias);
    }

    friend bool operator==(const Linear&, const Linear&) = default;
};

/// Glorot-uniform weights, zero bias.
inline void glorot_init(Linear& l, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(l.in_dim() + l.out_dim()));
    for (double& w : l.weight.values()) w = uniform(rng, -a, a);
    l.bias.fill(0.0);
}

inline Vector linear_forward(const Linear& l, std::span<const double> x) {
    require(x.size() == l.in_dim(), "linear: input length " + std::to_string(x.size()) + " does not match " +
                                        std::to_string(l.in_dim()));
    Vector y(l.bias.values().begin(), l.bias.values().end());
    matvec_accumulate(x, l.weight, y);
    return y;
}

/// Accumulates parameter gradients into `grad` and returns dL/dx.
inline Vector linear_backward(const Linear& l, std::span<const double> x, std::span<const double> dy, Linear& grad) {
    outer_accumulate(x, dy, grad.weight);
    auto gb = grad.bias.values();
    for (std::size_t j = 0; j < dy.size(); ++j) gb[j] += dy[j];
    Vector dx(l.in_dim(), 0.0);
    matvec_transposed_accumulate(l.weight, dy, dx);
    return dx;
}

/// Row-batched forward: Y = X * W + b. Each weight row is read once per batch.
inline Matrix linear_forward_batch(const Linear& l, const Matrix& x) {
    require(x.cols() == l.in_dim(), "linear: input width " + std::to_string(x.cols()) + " does not match " +
                                        std::to_string(l.in_dim()));
    const std::size_t n = l.out_dim();
    Matrix y(x.rows(), n);
    for (std::size_t s = 0; s < x.rows(); ++s) std::copy_n(l.bias.values().begin(), n, y.row(s).begin());
    for (std::size_t i = 0; i < l.in_dim(); ++i) {
        const double* wr = l.weight.row(i).data();
        for (std::size_t s = 0; s < x.rows(); ++s) {
            const double xi = x(s, i);
            if (xi == 0.0) continue;
            double* yr = y.row(s).data();
            for (std::size_t j = 0; j < n; ++j) yr[j] += xi * wr[j];
        }
    }
    return y;
}

/// Row-batched backward; accumulates into `grad`, returns dL/dX.
inline Matrix linear_backward_batch(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grad) {
    require(dy.rows() == x.rows() && dy.cols() == l.out_dim() && x.cols() == l.in_dim(),
            "linear backward: batch shapes disagree");
    const std::size_t n = l.out_dim();
    auto gb = grad.bias.values();
    for (std::size_t s = 0; s < dy.rows(); ++s)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy(s, j);
    Matrix dx(x.rows(), l.in_dim());
    for (std::size_t i = 0; i < l.in_dim(); ++i) {
        const double* wr = l.weight.row(i).data();
        double* gr = grad.weight.row(i).data();
        for (std::size_t s = 0; s < x.rows(); ++s) {
            const double* dyr = dy.row(s).data();
            dx(s, i) = detail::dot_lanes(wr, dyr, n);
            const double xi = x(s, i);
            if (xi == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gr[j] += xi * dyr[j];
        }
    }
    return dx;
}

inline Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
    require(x.same_shape(dy), "gelu backward: shapes disagree");
    Matrix dx(x.rows(), x.cols());
    auto xv = x.values();
    auto dv = dy.values();
    auto ov = dx.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = dv[i] * gelu_derivative(xv[i]);
    return dx;
}

inline Vector gelu_backward(std::span<const double> x, std::span<const double> dy) {
    Vector dx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_derivative(x[i]);
    return dx;
}

/// Collects every parameter of `params` into a tape, keyed by its path.
template <class Params>
GradTape make_tape(const Params& params, const std::string& prefix = "") {
    GradTape tape;
    Params::for_each_param(params, prefix, [&](const std::string& id, const Matrix& m) { tape.record(id, m); });
    return tape;
}

template <class Params>
std::vector<Matrix*> param_list(Params& params) {
    std::vector<Matrix*> out;
    Params::for_each_param(params, "", [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
}

template <class Params>
std::vector<const Matrix*> param_list(const Params& params) {
    std::vector<const Matrix*> out;
    Params::for_each_param(params, "", [&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
}

template <class Params>
void zero_params(Params& params) {
    Params::for_each_param(params, "", [](const std::string&, Matrix& m) { m.fill(0.0); });
}

template <class Params>
void scale_params(Params& params, double s) {
    Params::for_each_param(params, "", [s](const std::string&, Matrix& m) {
        for (double& v : m.values()) v *= s;
    });
}

template <class Params>
std::size_t param_count(const Params& params) {
    std::size_t n = 0;
    Params::for_each_param(params, "", [&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

template <class Params>
bool params_finite(const Params& params) {
    bool ok = true;
    Params::for_each_param(params, "", [&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
}

}  // namespace gzsl
