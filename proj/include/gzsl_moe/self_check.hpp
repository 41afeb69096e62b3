#pragma once

// Built-in verification suites behind `gzsl_moe check`. Each suite compares
// the library against a plain reference computation on seeded instances.

#include <cstdio>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "classifier.hpp"
#include "generator.hpp"
#include "grad_check.hpp"
#include "metrics.hpp"

namespace gzsl {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SuiteReport {
    std::string suite;
    std::vector<CheckResult> checks;

    [[nodiscard]] bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

namespace selfcheck {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline void randomize(Sequential& net, Rng& rng, double scale) {
    for (Matrix* m : param_list(net))
        for (double& v : m->values()) v = scale * standard_normal(rng);
}

/// Smallest gap between the K-th and (K+1)-th gate logit over every MoE layer.
inline double routing_margin(const Sequential& net, std::span<const double> x) {
    double margin = std::numeric_limits<double>::infinity();
    const ForwardTrace t = forward_traced(net, x);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto* moe = std::get_if<MoeLayer>(&net.layers[i]);
        if (!moe || moe->top_k == moe->num_experts()) continue;
        Vector logits = matvec(t.layers[i].moe->input, moe->gate);
        std::sort(logits.begin(), logits.end(), std::greater<>());
        margin = std::min(margin, logits[moe->top_k - 1] - logits[moe->top_k]);
    }
    return margin;
}

/// Finite-difference check of L = u . net(x) over parameters and input.
inline GradCheckReport stack_check(Sequential& net, Rng& rng, double min_margin = 1e-3) {
    Vector x;
    for (int attempt = 0;; ++attempt) {
        require(attempt < 100, "self-check: no instance with a clear routing margin");
        x = normal_vector(rng, net.in_dim());
        if (routing_margin(net, x) >= min_margin) break;
    }
    const Vector u = normal_vector(rng, net.out_dim());
    Sequential grads = zeros_like(net);
    const Vector dx = backward(net, forward_traced(net, x), u, grads);
    std::vector<GradProbe> probes;
    const auto p = param_list(net);
    const auto g = param_list(std::as_const(grads));
    for (std::size_t i = 0; i < p.size(); ++i) probes.push_back({"param" + std::to_string(i), p[i]->values(), g[i]->values()});
    probes.push_back({"input", x, dx});
    return grad_check([&] { return dot(u, forward(net, x)); }, probes, 1e-4);
}

inline CheckResult repeat(const std::string& name, std::size_t seeds, const std::function<GradCheckReport(Rng&)>& one) {
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(s, name));
        const GradCheckReport r = one(rng);
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed) return {name, false, "seed " + std::to_string(s) + " " + r.worst + fmt(" rel err %.3g", r.max_rel_error)};
    }
    return {name, true, std::to_string(seeds) + " seeds" + fmt(", max rel err %.3g", worst)};
}

}  // namespace selfcheck

inline SuiteReport run_grad_suite(std::size_t seeds = 20) {
    using namespace selfcheck;
    SuiteReport r{"grad", {}};
    r.checks.push_back(repeat("gelu", seeds, [](Rng& rng) {
        Vector x = normal_vector(rng, 16);
        for (double& v : x) v *= 3.0;
        Vector d(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] = gelu_derivative(x[i]);
        Vector u = normal_vector(rng, x.size());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] *= u[i];
        return grad_check([&] { return dot(u, gelu(x)); }, {{"x", x, d}}, 1e-4);
    }));
    r.checks.push_back(repeat("softmax-cross-entropy", seeds, [](Rng& rng) {
        Vector z = normal_vector(rng, 6);
        const std::size_t target = static_cast<std::size_t>(rng() % 6);
        const Vector g = softmax_cross_entropy_grad(softmax(z), target);
        return grad_check([&] { return cross_entropy(softmax(z), target); }, {{"logits", z, g}}, 1e-4);
    }));
    r.checks.push_back(repeat("softmax", seeds, [](Rng& rng) {
        Vector z = normal_vector(rng, 6);
        const Vector u = normal_vector(rng, 6);
        const Vector g = softmax_backward(softmax(z), u);
        return grad_check([&] { return dot(u, softmax(z)); }, {{"logits", z, g}}, 1e-4);
    }));
    r.checks.push_back(repeat("expert", seeds, [](Rng& rng) {
        Sequential net{{MoeLayer(4, 6, 3, 1, 1)}};
        randomize(net, rng, 0.7);
        return stack_check(net, rng);
    }));
    r.checks.push_back(repeat("moe-layer", seeds, [](Rng& rng) {
        Sequential net{{MoeLayer(5, 8, 4, 8, 2)}};
        randomize(net, rng, 0.7);
        return stack_check(net, rng);
    }));
    r.checks.push_back(repeat("generator-stack", seeds, [](Rng& rng) {
        GeneratorConfig cfg;
        cfg.noise_dim = 3;
        cfg.hidden = 6;
        cfg.num_experts = 4;
        cfg.expert_hidden_mult = 2;
        GeneratorParams g = init_generator(cfg, 4, 5, rng());
        randomize(g.net, rng, 0.5);
        return stack_check(g.net, rng);
    }));
    r.checks.push_back(repeat("classifier-stack", seeds, [](Rng& rng) {
        ClassifierConfig cfg;
        cfg.hidden = 6;
        cfg.num_experts = 4;
        cfg.expert_hidden_mult = 2;
        ClassifierParams p = init_classifier(cfg, 5, {1, 2, 3, 4, 5}, rng());
        randomize(p.net, rng, 0.5);
        return stack_check(p.net, rng);
    }));
    return r;
}

inline SuiteReport run_moe_suite(std::size_t instances = 200) {
    using namespace selfcheck;
    SuiteReport r{"moe", {}};
    for (auto [m, k] : {std::pair<std::size_t, std::size_t>{8, 2}, {32, 8}}) {
        double worst = 0.0;
        for (std::size_t s = 0; s < instances; ++s) {
            Rng rng(derive_seed(s, "moe-dense"));
            MoeLayer layer(6, 8, 5, m, k);
            Sequential net{{layer}};
            randomize(net, rng, 0.5);
            const MoeLayer& l = std::get<MoeLayer>(net.layers[0]);
            const Vector x = normal_vector(rng, 6);
            // evaluate every expert, then weight by the masked softmax
            const Vector w = gate(x, l.gate, k).weights;
            Vector dense(5, 0.0);
            for (std::size_t e = 0; e < m; ++e) {
                const Vector y = expert_forward(l.experts[e], x);
                for (std::size_t j = 0; j < 5; ++j) dense[j] += w[e] * y[j];
            }
            const Vector y = moe_forward(l, x).output;
            for (std::size_t j = 0; j < 5; ++j) worst = std::max(worst, std::abs(y[j] - dense[j]));
        }
        r.checks.push_back({"dense-equivalence M=" + std::to_string(m) + " K=" + std::to_string(k), worst <= 1e-9,
                            fmt("max abs diff %.3g", worst)});
    }

    bool ok = true;
    std::string detail = "10000 logit vectors";
    Rng rng(derive_seed(0, "moe-gate"));
    for (std::size_t t = 0; t < 10000 && ok; ++t) {
        const std::size_t m = 2 + t % 15, k = 1 + (t / 15) % m;
        Vector logits = normal_vector(rng, m);
        if (t % 2) // adversarial ties
            for (double& v : logits) v = std::round(v);
        const GateDecision d = gate_from_logits(logits, k);
        std::size_t nonzero = 0;
        double sum = 0.0;
        for (double v : d.weights) {
            nonzero += v != 0.0;
            sum += v;
        }
        // brute-force selection: a beats b if larger, or equal with lower index
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t better = 0;
            for (std::size_t j = 0; j < m; ++j)
                better += logits[j] > logits[i] || (logits[j] == logits[i] && j < i);
            if (better < k) want.push_back(i);
        }
        if (nonzero != k || std::abs(sum - 1.0) > 1e-12 || d.selected != want) {
            ok = false;
            detail = "failed at instance " + std::to_string(t);
        }
    }
    r.checks.push_back({"gate-invariants", ok, detail});
    return r;
}

inline SuiteReport run_metrics_suite() {
    using namespace selfcheck;
    SuiteReport r{"metrics", {}};
    ConfusionMatrix cm({1, 2});
    cm.add(0, 0, 3);
    cm.add(0, 1, 1);
    cm.add(1, 0, 1);
    cm.add(1, 1, 5);
    const double miou = *miou_subsets(cm, SplitConfig{{1}, {2}}).all;
    r.checks.push_back({"miou-example", std::abs(miou - (0.6 + 5.0 / 7.0) / 2.0) < 1e-12, fmt("%.6f", miou)});
    const double hm = harmonic_mean(89.3, 64.96);
    r.checks.push_back({"harmonic-mean", std::abs(hm - 75.21) <= 0.01, fmt("%.4f", hm)});

    Rng rng(derive_seed(0, "metrics"));
    const std::vector<ClassId> classes{1, 2, 3, 4, 5};
    std::vector<ClassId> truth, pred;
    for (int i = 0; i < 10000; ++i) {
        truth.push_back(classes[rng() % 5]);
        pred.push_back(rng() % 2 ? truth.back() : classes[rng() % 5]);
    }
    ConfusionMatrix big(classes);
    accumulate(big, truth, pred);
    std::size_t match = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) match += truth[i] == pred[i];
    const double acc = build_report(big, covered::default_split()).overall_accuracy;
    r.checks.push_back({"accuracy-vs-direct", acc == static_cast<double>(match) / 10000.0, fmt("%.6f", acc)});

    bool iou_ok = true;
    const auto iou = iou_per_class(big);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool t = truth[i] == classes[c], p = pred[i] == classes[c];
            inter += t && p;
            uni += t || p;
        }
        iou_ok = iou_ok && std::abs(*iou[c] - static_cast<double>(inter) / static_cast<double>(uni)) < 1e-15;
    }
    r.checks.push_back({"iou-vs-sets", iou_ok, "5 classes"});
    return r;
}

/// Suite by name: grad, moe or metrics.
inline SuiteReport run_suite(std::string_view name) {
    if (name == "grad") return run_grad_suite();
    if (name == "moe") return run_moe_suite();
    if (name == "metrics") return run_metrics_suite();
    throw Error(ErrorKind::config, "unknown check suite '" + std::string(name) + "'");
}

}  // namespace gzsl
