#pragma once

// Stage 3: the MoE classifier over real seen + fake unseen features, and
// stage 4 inference (backbone features -> classifier; no generator).

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "backbone.hpp"

namespace gzsl {

enum class ZslMode { zsl, gzsl };

struct ClassifierConfig {
    ZslMode mode = ZslMode::gzsl;
    std::size_t hidden = 128;
    std::size_t num_experts = 8;
    std::size_t top_k = 2;
    std::size_t expert_hidden_mult = 4;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    std::size_t n_per_class = 0;  // fakes per unseen class; 0 = mean real-seen per-class count
    bool class_weights = false;
    double importance_coef = 0.0;

    void validate() const {
        require(hidden >= 1, "classifier: hidden width must be positive", ErrorKind::config);
        require(top_k >= 1 && top_k <= num_experts, "classifier: need M >= K >= 1", ErrorKind::config);
        require(batch_size >= 1, "classifier: batch size must be at least 1", ErrorKind::config);
        require(expert_hidden_mult >= 1, "classifier: expert hidden multiplier must be at least 1", ErrorKind::config);
    }
};

struct ClassifierParams {
    std::vector<ClassId> classes;  // logit order, ascending
    Sequential net;                // F -> MoE -> GELU -> MoE -> linear -> C

    [[nodiscard]] std::size_t feature_dim() const { return net.in_dim(); }
    [[nodiscard]] std::size_t num_classes() const { return classes.size(); }

    [[nodiscard]] std::size_t index_of(ClassId c) const {
        auto it = std::lower_bound(classes.begin(), classes.end(), c);
        require(it != classes.end() && *it == c, "class " + std::to_string(c) + " is not in the classifier label space");
        return static_cast<std::size_t>(it - classes.begin());
    }

    friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

inline std::vector<ClassId> label_space(const SplitConfig& split, ZslMode mode) {
    std::set<ClassId> s = mode == ZslMode::gzsl ? split.all() : split.unseen;
    return {s.begin(), s.end()};
}

inline ClassifierParams init_classifier(const ClassifierConfig& cfg, std::size_t feature_dim,
                                        std::vector<ClassId> classes, std::uint64_t seed) {
    cfg.validate();
    require(!classes.empty(), "classifier: empty label space", ErrorKind::config);
    std::sort(classes.begin(), classes.end());
    ClassifierParams p;
    p.classes = std::move(classes);
    p.net.layers.emplace_back(
        MoeLayer(feature_dim, cfg.expert_hidden_mult * feature_dim, cfg.hidden, cfg.num_experts, cfg.top_k));
    p.net.layers.emplace_back(GeluLayer{});
    p.net.layers.emplace_back(
        MoeLayer(cfg.hidden, cfg.expert_hidden_mult * cfg.hidden, cfg.hidden, cfg.num_experts, cfg.top_k));
    p.net.layers.emplace_back(Linear(cfg.hidden, p.classes.size()));
    Rng rng(seed);
    glorot_init(p.net, rng);
    return p;
}

/// Lowest index among the maxima.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

struct Classification {
    std::vector<ClassId> predicted;
    Matrix probabilities;  // rows x C, columns in params.classes order
};

inline Classification classify(const ClassifierParams& p, const FeatureBatch& features) {
    require(features.empty() || features.dim() == p.feature_dim(),
            "classify: feature dim " + std::to_string(features.dim()) + " does not match classifier input " +
                std::to_string(p.feature_dim()));
    Classification out{{}, Matrix(0, p.num_classes())};
    out.predicted.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const Vector prob = softmax(forward(p.net, features.features.row(i)));
        out.predicted.push_back(p.classes[argmax(prob)]);
        out.probabilities.append_row(prob);
    }
    return out;
}

struct ClassifierTrainResult {
    ClassifierParams params;
    std::vector<double> loss_history;
};

/// Called once per consumed training row: (epoch, row) where rows index the
/// concatenation real_seen ++ fake_unseen (GZSL) or fake_unseen (ZSL).
using RowObserver = std::function<void(std::size_t, std::size_t)>;

inline ClassifierTrainResult train_classifier(ClassifierParams params, const FeatureBatch& real_seen,
                                              const FeatureBatch& fake_unseen, const ClassifierConfig& cfg,
                                              const AdamConfig& opt, std::uint64_t seed,
                                              const RowObserver& observe = {}) {
    cfg.validate();
    const bool gzsl = cfg.mode == ZslMode::gzsl;
    const char* space = gzsl ? "label outside GZSL space" : "label outside ZSL space";
    if (gzsl) require(!real_seen.empty(), "GZSL classifier training requires real seen features", ErrorKind::config);
    require(!fake_unseen.empty(), "classifier training requires fake unseen features", ErrorKind::config);

    FeatureBatch rows(params.feature_dim());
    if (gzsl) rows.append(real_seen);
    rows.append(fake_unseen);
    rows.validate();
    require(rows.dim() == params.feature_dim(), "classifier: feature dim does not match classifier input");
    std::vector<std::size_t> targets;
    targets.reserve(rows.size());
    for (ClassId c : rows.labels) {
        require(std::binary_search(params.classes.begin(), params.classes.end(), c),
                std::string(space) + ": class " + std::to_string(c));
        targets.push_back(params.index_of(c));
    }

    ClassifierTrainResult result{std::move(params), {}};
    if (cfg.epochs == 0) return result;
    ClassifierParams& p = result.params;
    Sequential grads = zeros_like(p.net);
    const auto plist = param_list(p.net);
    const auto glist = param_list(std::as_const(grads));
    Adam adam(opt);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(rows.labels, cfg.batch_size,
                                          derive_seed(seed, "classifier-epoch-" + std::to_string(epoch)),
                                          cfg.class_weights);
        double epoch_loss = 0.0;
        for (const auto& b : batches) {
            zero_params(grads);
            const double inv = 1.0 / static_cast<double>(b.indices.size());
            Matrix x(0, rows.dim());
            for (std::size_t r : b.indices) {
                if (observe) observe(epoch, r);
                x.append_row(rows.features.row(r));
            }
            const BatchTrace trace = forward_batch(p.net, x);
            std::vector<Vector> gate_grads;
            if (cfg.importance_coef > 0.0)
                for (const auto& ds : trace.decisions())
                    gate_grads.push_back(importance_loss(ds, cfg.num_experts, cfg.importance_coef).weight_grad);
            Matrix dz(x.rows(), p.num_classes());
            for (std::size_t s = 0; s < b.indices.size(); ++s) {
                const std::size_t target = targets[b.indices[s]];
                const Vector prob = softmax(trace.output.row(s));
                epoch_loss += cross_entropy(prob, target);
                const Vector g = softmax_cross_entropy_grad(prob, target);
                for (std::size_t j = 0; j < g.size(); ++j) dz(s, j) = g[j] * b.weights[s] * inv;
            }
            backward_batch(p.net, trace, dz, grads, gate_grads.empty() ? nullptr : &gate_grads);
            adam.step(plist, glist);
        }
        epoch_loss /= static_cast<double>(rows.size());
        check_loss(epoch_loss, "classifier", epoch);
        result.loss_history.push_back(epoch_loss);
    }
    require(params_finite(p.net), "divergence: classifier parameters became non-finite", ErrorKind::divergence);
    return result;
}

/// Per-point labels for a frame: backbone features then classifier.
inline std::vector<ClassId> infer_frame(const BackboneParams& backbone, const ClassifierParams& classifier,
                                        const PointFrame& frame) {
    if (frame.size() == 0) return {};
    return classify(classifier, extract_features(backbone, frame)).predicted;
}

}  // namespace gzsl
