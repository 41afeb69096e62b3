#pragma once

// Stage 2: the MoE feature generator. Fake features are produced from a
// class prototype and a standard-normal noise vector, and trained with a
// per-class multi-bandwidth Gaussian MMD against real seen-class features.

#include <algorithm>
#include <atomic>
#include <map>
#include <vector>

#include "backbone.hpp"
#include "prototypes.hpp"

namespace gzsl {

struct GeneratorConfig {
    std::size_t noise_dim = 32;
    std::size_t hidden = 128;
    std::size_t depth = 2;
    std::size_t num_experts = 8;
    std::size_t top_k = 2;
    std::size_t expert_hidden_mult = 4;
    std::size_t epochs = 30;
    std::size_t steps_per_epoch = 4;
    std::size_t batch_per_class = 64;
    std::vector<double> bandwidths = {2, 5, 10, 20, 40, 80};
    double importance_coef = 0.0;

    void validate() const {
        require(noise_dim >= 1 && hidden >= 1, "generator: dimensions must be positive", ErrorKind::config);
        require(top_k >= 1 && top_k <= num_experts, "generator: need M >= K >= 1", ErrorKind::config);
        require(batch_per_class >= 2, "generator: batch_per_class must be at least 2", ErrorKind::config);
        require(!bandwidths.empty(), "generator: at least one MMD bandwidth is required", ErrorKind::config);
        for (double b : bandwidths) require(b > 0.0, "generator: bandwidths must be positive", ErrorKind::config);
    }
};

struct GeneratorParams {
    std::size_t noise_dim = 0;
    std::size_t prototype_dim = 0;
    Sequential net;  // (noise_dim + prototype_dim) -> hidden -> [MoE]* -> F

    [[nodiscard]] std::size_t feature_dim() const { return net.out_dim(); }

    friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

inline GeneratorParams init_generator(const GeneratorConfig& cfg, std::size_t prototype_dim, std::size_t feature_dim,
                                      std::uint64_t seed) {
    cfg.validate();
    GeneratorParams g;
    g.noise_dim = cfg.noise_dim;
    g.prototype_dim = prototype_dim;
    g.net.layers.emplace_back(Linear(cfg.noise_dim + prototype_dim, cfg.hidden));
    for (std::size_t i = 0; i < cfg.depth; ++i)
        g.net.layers.emplace_back(
            MoeLayer(cfg.hidden, cfg.expert_hidden_mult * cfg.hidden, cfg.hidden, cfg.num_experts, cfg.top_k));
    g.net.layers.emplace_back(Linear(cfg.hidden, feature_dim));
    Rng rng(seed);
    glorot_init(g.net, rng);
    return g;
}

/// Process-wide count of generate() calls; lets tests prove inference never reaches the generator.
inline std::atomic<std::uint64_t>& generator_invocations() {
    static std::atomic<std::uint64_t> calls{0};
    return calls;
}

inline Vector generator_input(const GeneratorParams& g, std::span<const double> prototype, std::span<const double> z) {
    require(prototype.size() == g.prototype_dim, "generate: prototype has dim " + std::to_string(prototype.size()) +
                                                     ", generator expects " + std::to_string(g.prototype_dim));
    require(z.size() == g.noise_dim, "generate: noise has dim " + std::to_string(z.size()) + ", generator expects " +
                                         std::to_string(g.noise_dim));
    Vector in(z.begin(), z.end());
    in.insert(in.end(), prototype.begin(), prototype.end());
    return in;
}

inline Vector generate(const GeneratorParams& g, std::span<const double> prototype, std::span<const double> z) {
    generator_invocations().fetch_add(1, std::memory_order_relaxed);
    return forward(g.net, generator_input(g, prototype, z));
}

// ---------------------------------------------------------------------------
// MMD

namespace detail {

inline double kernel_sum(std::span<const double> a, std::span<const double> b, std::span<const double> inv_two_sigma_sq) {
    const double d2 = squared_distance(a, b);
    double k = 0.0;
    for (double c : inv_two_sigma_sq) k += std::exp(-d2 * c);
    return k;
}

inline double mean_kernel(const Matrix& a, const Matrix& b, std::span<const double> c) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) s += kernel_sum(a.row(i), b.row(j), c);
    return s / static_cast<double>(a.rows() * b.rows());
}

inline Vector inv_two_sigma_sq(std::span<const double> sigmas) {
    Vector c;
    for (double s : sigmas) {
        require(s > 0.0, "mmd: kernel bandwidths must be positive");
        c.push_back(1.0 / (2.0 * s * s));
    }
    return c;
}

}  // namespace detail

/// Biased MMD^2 with k(a,b) = sum_s exp(-|a-b|^2 / (2 s^2)), clamped at 0.
inline double mmd_loss(const Matrix& real, const Matrix& fake, std::span<const double> sigmas) {
    require(real.rows() > 0 && fake.rows() > 0, "mmd: empty batch");
    require(real.cols() == fake.cols(), "mmd: feature dims differ");
    const Vector c = detail::inv_two_sigma_sq(sigmas);
    const double v =
        detail::mean_kernel(real, real, c) + detail::mean_kernel(fake, fake, c) - 2.0 * detail::mean_kernel(real, fake, c);
    return std::max(0.0, v);
}

inline double mmd_loss(const FeatureBatch& real, const FeatureBatch& fake, std::span<const double> sigmas) {
    return mmd_loss(real.features, fake.features, sigmas);
}

/// d MMD^2 / d fake rows (unclamped estimator).
inline Matrix mmd_grad_fake(const Matrix& real, const Matrix& fake, std::span<const double> sigmas) {
    const Vector c = detail::inv_two_sigma_sq(sigmas);
    const double m = static_cast<double>(fake.rows()), n = static_cast<double>(real.rows());
    Matrix g(fake.rows(), fake.cols());
    auto accumulate = [&](std::span<const double> f, std::span<const double> other, double coef, std::span<double> out) {
        const double d2 = squared_distance(f, other);
        double s = 0.0;
        for (double ci : c) s -= ci * std::exp(-d2 * ci);  // dk/d(d2)
        // d(d2)/df = 2 (f - other)
        for (std::size_t t = 0; t < f.size(); ++t) out[t] += coef * s * 2.0 * (f[t] - other[t]);
    };
    for (std::size_t i = 0; i < fake.rows(); ++i) {
        auto out = g.row(i);
        for (std::size_t j = 0; j < fake.rows(); ++j)
            if (j != i) accumulate(fake.row(i), fake.row(j), 2.0 / (m * m), out);
        for (std::size_t a = 0; a < real.rows(); ++a) accumulate(fake.row(i), real.row(a), -2.0 / (n * m), out);
    }
    return g;
}

inline double median_pairwise_distance(const Matrix& x) {
    std::vector<double> d;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = i + 1; j < x.rows(); ++j) d.push_back(std::sqrt(squared_distance(x.row(i), x.row(j))));
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    const double med = d[d.size() / 2];
    return med > 1e-12 ? med : 1.0;
}

/// Kernel widths sigma_i = b_i / 10 * median pairwise distance of `reference`.
inline Vector scaled_bandwidths(std::span<const double> base, const Matrix& reference) {
    const double med = median_pairwise_distance(reference);
    Vector s;
    for (double b : base) s.push_back(b / 10.0 * med);
    return s;
}

// ---------------------------------------------------------------------------
// Training

struct GeneratorTrainResult {
    GeneratorParams params;
    std::vector<double> loss_history;  // mean per-class MMD per epoch
};

inline void check_generator_inputs(const FeatureBatch& real_seen, const ClassPrototypeTable& prototypes) {
    real_seen.validate();
    for (std::size_t i = 0; i < real_seen.size(); ++i) {
        const ClassId c = real_seen.labels[i];
        require(real_seen.provenance[i] == Provenance::real, "generator training requires real features");
        require(!prototypes.split.is_unseen(c), "unseen class in generator training");
        require(prototypes.split.is_seen(c), "class " + std::to_string(c) + " is not in the seen set");
        require(prototypes.contains(c), "missing prototype for class " + std::to_string(c));
    }
}

/// Draws `n` fakes of class `c` with fresh noise from `rng`; returns the traces.
inline std::vector<ForwardTrace> generate_traced(const GeneratorParams& g, std::span<const double> prototype,
                                                 std::size_t n, Rng& rng) {
    std::vector<ForwardTrace> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector z = normal_vector(rng, g.noise_dim);
        generator_invocations().fetch_add(1, std::memory_order_relaxed);
        out.push_back(forward_traced(g.net, generator_input(g, prototype, z)));
    }
    return out;
}

/// Batched counterpart of generate_traced; same noise draws, one trace for all rows.
inline BatchTrace generate_batch_traced(const GeneratorParams& g, std::span<const double> prototype, std::size_t n,
                                        Rng& rng) {
    Matrix input(0, g.noise_dim + g.prototype_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector z = normal_vector(rng, g.noise_dim);
        generator_invocations().fetch_add(1, std::memory_order_relaxed);
        input.append_row(generator_input(g, prototype, z));
    }
    return forward_batch(g.net, input);
}

/// Per-class MMD between `n` fresh fakes and up to `n` real rows of each seen class.
inline std::map<ClassId, double> generator_class_mmd(const GeneratorParams& g, const FeatureBatch& real_seen,
                                                     const ClassPrototypeTable& prototypes, std::span<const double> base,
                                                     std::size_t n, std::uint64_t seed) {
    check_generator_inputs(real_seen, prototypes);
    std::map<ClassId, double> out;
    Rng rng(seed);
    for (const auto& [c, rows] : real_seen.rows_by_class()) {
        const auto order = shuffled_indices(rows.size(), rng());
        Matrix real(0, real_seen.dim()), fake(0, real_seen.dim());
        for (std::size_t i = 0; i < std::min(n, rows.size()); ++i) real.append_row(real_seen.features.row(rows[order[i]]));
        for (const auto& t : generate_traced(g, prototypes.at(c), n, rng)) fake.append_row(t.output);
        out[c] = mmd_loss(real, fake, scaled_bandwidths(base, real));
    }
    return out;
}

inline GeneratorTrainResult train_generator(GeneratorParams gen, const FeatureBatch& real_seen,
                                            const ClassPrototypeTable& prototypes, const GeneratorConfig& cfg,
                                            const AdamConfig& opt, std::uint64_t seed) {
    cfg.validate();
    check_generator_inputs(real_seen, prototypes);
    require(real_seen.dim() == gen.feature_dim(), "generator output dim does not match real feature dim");
    GeneratorTrainResult result{std::move(gen), {}};
    if (cfg.epochs == 0) return result;
    require(!real_seen.empty(), "generator training requires real seen features", ErrorKind::config);
    GeneratorParams& g = result.params;

    const auto by_class = real_seen.rows_by_class();
    // Bandwidths are fixed per class from the real features.
    std::map<ClassId, Vector> sigmas;
    {
        Rng rng(derive_seed(seed, "generator-bandwidth"));
        for (const auto& [c, rows] : by_class) {
            const auto order = shuffled_indices(rows.size(), rng());
            Matrix sample(0, real_seen.dim());
            for (std::size_t i = 0; i < std::min<std::size_t>(256, rows.size()); ++i)
                sample.append_row(real_seen.features.row(rows[order[i]]));
            sigmas[c] = scaled_bandwidths(cfg.bandwidths, sample);
        }
    }

    Sequential grads = zeros_like(g.net);
    const auto params = param_list(g.net);
    const auto grad_list = param_list(std::as_const(grads));
    Adam adam(opt);
    Rng rng(derive_seed(seed, "generator-train"));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
            zero_params(grads);
            double step_loss = 0.0;
            const double class_scale = 1.0 / static_cast<double>(by_class.size());
            for (const auto& [c, rows] : by_class) {
                const std::size_t n = std::min(cfg.batch_per_class, rows.size());
                const auto order = shuffled_indices(rows.size(), rng());
                Matrix real(0, real_seen.dim());
                for (std::size_t i = 0; i < n; ++i) real.append_row(real_seen.features.row(rows[order[i]]));
                const BatchTrace trace = generate_batch_traced(g, prototypes.at(c), n, rng);
                const Matrix& fake = trace.output;
                const double loss = mmd_loss(real, fake, sigmas.at(c));
                step_loss += loss * class_scale;
                Matrix dfake = mmd_grad_fake(real, fake, sigmas.at(c));
                for (double& v : dfake.values()) v *= class_scale;
                std::vector<Vector> gate_grads;
                if (cfg.importance_coef > 0.0)
                    for (const auto& ds : trace.decisions())
                        gate_grads.push_back(importance_loss(ds, cfg.num_experts, cfg.importance_coef).weight_grad);
                backward_batch(g.net, trace, dfake, grads, gate_grads.empty() ? nullptr : &gate_grads);
            }
            adam.step(params, grad_list);
            epoch_loss += step_loss;
        }
        epoch_loss /= static_cast<double>(cfg.steps_per_epoch);
        check_loss(epoch_loss, "generator", epoch);
        result.loss_history.push_back(epoch_loss);
    }
    require(params_finite(g.net), "divergence: generator parameters became non-finite", ErrorKind::divergence);
    return result;
}

/// `n_per_class` fakes for every unseen class, in class order.
inline FeatureBatch synthesize_unseen(const GeneratorParams& g, const ClassPrototypeTable& prototypes,
                                      std::size_t n_per_class, std::uint64_t seed) {
    FeatureBatch out(g.feature_dim());
    Rng rng(seed);
    for (ClassId c : prototypes.split.unseen) {
        const Vector& proto = prototypes.at(c);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const Vector z = normal_vector(rng, g.noise_dim);
            out.push(generate(g, proto, z), c, Provenance::fake);
        }
    }
    return out;
}

}  // namespace gzsl
