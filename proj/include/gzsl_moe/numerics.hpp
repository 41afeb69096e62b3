#pragma once

// Dense double-precision substrate: Matrix, activations, losses, Adam, RNG.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gzsl {

/// Failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
    invalid_argument,
    config,
    io,
    format,
    missing_checkpoint,
    divergence,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::invalid_argument) {
    if (!cond) throw Error(kind, what);
}

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        require(values_.size() == rows_ * cols_, "matrix value count does not match shape");
    }

    static Matrix row_vector(std::span<const double> v) { return {1, v.size(), Vector(v.begin(), v.end())}; }
    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }
    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }
    void append_row(std::span<const double> r) {
        if (rows_ == 0 && cols_ == 0) cols_ = r.size();
        require(r.size() == cols_, "appended row has wrong width");
        values_.insert(values_.end(), r.begin(), r.end());
        ++rows_;
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

inline Matrix zeros_like(const Matrix& m) { return {m.rows(), m.cols()}; }

namespace detail {
// Eight independent partial sums so the reduction vectorizes without
// reassociation flags; the summation order is still fixed.
inline double dot_lanes(const double* a, const double* b, std::size_t n) {
    double acc[8] = {};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
        for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
    double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (; j < n; ++j) s += a[j] * b[j];
    return s;
}
}  // namespace detail

/// y = x * W (x a row vector of length W.rows()).
inline void matvec_accumulate(std::span<const double> x, const Matrix& w, std::span<double> y) {
    const std::size_t n = w.cols();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wr = w.row(i).data();
        for (std::size_t j = 0; j < n; ++j) y[j] += xi * wr[j];
    }
}

inline Vector matvec(std::span<const double> x, const Matrix& w) {
    require(x.size() == w.rows(), "matvec: input length " + std::to_string(x.size()) + " does not match " +
                                      std::to_string(w.rows()) + " weight rows");
    Vector y(w.cols(), 0.0);
    matvec_accumulate(x, w, y);
    return y;
}

/// dx += W * dy  (back-propagation through y = x * W).
inline void matvec_transposed_accumulate(const Matrix& w, std::span<const double> dy, std::span<double> dx) {
    const std::size_t n = w.cols();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        dx[i] += detail::dot_lanes(w.row(i).data(), dy.data(), n);
    }
}

/// G += scale * outer(x, dy).
inline void outer_accumulate(std::span<const double> x, std::span<const double> dy, Matrix& g, double scale = 1.0) {
    const std::size_t n = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i) {
        const double xi = x[i] * scale;
        if (xi == 0.0) continue;
        double* gr = g.row(i).data();
        for (std::size_t j = 0; j < n; ++j) gr[j] += xi * dy[j];
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    return detail::dot_lanes(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Activations and losses

inline constexpr double kGeluCoeff = 0.044715;

/// Tanh approximation of GELU.
inline double gelu(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(k * (x + kGeluCoeff * x * x * x)));
}

inline double gelu_derivative(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    const double inner = k * (x + kGeluCoeff * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = k * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

/// {gelu(x), gelu'(x)} from a single tanh evaluation.
inline std::pair<double, double> gelu_with_derivative(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    const double t = std::tanh(k * (x + kGeluCoeff * x * x * x));
    const double dinner = k * (1.0 + 3.0 * kGeluCoeff * x * x);
    return {0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner};
}

inline Vector gelu(std::span<const double> x) {
    Vector y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [](double v) { return gelu(v); });
    return y;
}

inline Matrix gelu(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.values()) v = gelu(v);
    return out;
}

/// Numerically stable softmax. Entries equal to -inf receive exactly zero weight.
inline Vector softmax(std::span<const double> logits) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double l : logits) hi = std::max(hi, l);
    require(std::isfinite(hi), "empty support");
    Vector p(logits.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logits[i] == -std::numeric_limits<double>::infinity()) continue;
        p[i] = std::exp(logits[i] - hi);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

/// dL/dlogits given dL/dp and p = softmax(logits).
inline Vector softmax_backward(std::span<const double> p, std::span<const double> grad_p) {
    const double s = dot(p, grad_p);
    Vector g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] * (grad_p[i] - s);
    return g;
}

inline constexpr double kProbabilityClip = 1e-12;

inline double cross_entropy(std::span<const double> probabilities, std::size_t true_class) {
    require(true_class < probabilities.size(), "cross_entropy: class index " + std::to_string(true_class) +
                                                   " out of range");
    return -std::log(std::max(probabilities[true_class], kProbabilityClip));
}

/// Gradient of cross_entropy(softmax(z), c) with respect to z.
inline Vector softmax_cross_entropy_grad(std::span<const double> probabilities, std::size_t true_class) {
    require(true_class < probabilities.size(), "cross_entropy: class index out of range");
    Vector g(probabilities.begin(), probabilities.end());
    g[true_class] -= 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

struct AdamConfig {
    double learning_rate = 0.0005;
    double beta1 = 0.92;
    double beta2 = 0.98;
    double weight_decay = 0.0001;
    double epsilon = 1e-8;

    void validate() const {
        require(learning_rate > 0.0, "adam: learning rate must be positive", ErrorKind::config);
        require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "adam: betas must lie in (0,1)",
                ErrorKind::config);
        require(weight_decay >= 0.0, "adam: weight decay must be nonnegative", ErrorKind::config);
        require(epsilon > 0.0, "adam: epsilon must be positive", ErrorKind::config);
    }
};

/// Per-parameter optimizer moments.
struct AdamState {
    Matrix first_moment;
    Matrix second_moment;
    std::uint64_t step = 0;
};

inline void adam_update(const AdamConfig& cfg, AdamState& state, Matrix& param, const Matrix& grad) {
    require(param.same_shape(grad), "adam_update: gradient shape does not match parameter");
    if (state.step == 0 && state.first_moment.size() == 0) {
        state.first_moment = zeros_like(param);
        state.second_moment = zeros_like(param);
    }
    require(state.first_moment.same_shape(param), "adam_update: moment shape does not match parameter");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    auto p = param.values();
    auto g = grad.values();
    auto m = state.first_moment.values();
    auto v = state.second_moment.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p[i] = p[i] * decay - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

/// Adam over an ordered list of parameters; one state slot per position.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
        require(params.size() == grads.size(), "adam: parameter and gradient lists differ in length");
        if (states_.empty()) states_.resize(params.size());
        require(states_.size() == params.size(), "adam: parameter list changed between steps");
        for (std::size_t i = 0; i < params.size(); ++i) adam_update(cfg_, states_[i], *params[i], *grads[i]);
    }

    [[nodiscard]] const AdamConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::uint64_t steps() const noexcept { return states_.empty() ? 0 : states_.front().step; }

private:
    AdamConfig cfg_;
    std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// Seeding

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Stable derivation of a child seed from a parent seed and a label.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ splitmix64(fnv1a(label)));
}

using Rng = std::mt19937_64;

inline double standard_normal(Rng& rng) {
    // Box-Muller; std::normal_distribution caches state across calls, which
    // makes draws depend on call history in ways that are awkward to reason about.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double u1 = u(rng);
    while (u1 <= 0.0) u1 = u(rng);
    const double u2 = u(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Vector normal_vector(Rng& rng, std::size_t n) {
    Vector v(n);
    for (double& x : v) x = standard_normal(rng);
    return v;
}

}  // namespace gzsl
