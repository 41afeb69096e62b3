#pragma once

// Sparse top-K mixture-of-experts layer.
//
// The gate scores every expert with logits l = x * Wg, keeps the K largest
// (lower expert index wins ties at the K-th rank), masks the rest to -inf and
// takes a softmax. Only the selected experts are evaluated; the layer output
// is the gate-weighted sum of their outputs. Each expert is
// fc2(gelu(fc1(x))).

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "layers.hpp"

namespace gzsl {

struct Expert {
    Linear fc1;
    Linear fc2;

    Expert() = default;
    Expert(std::size_t in, std::size_t hidden, std::size_t out) : fc1(in, hidden), fc2(hidden, out) {}

    template <class Self, class F>
    static void for_each_param(Self& self, const std::string& prefix, F&& f) {
        Linear::for_each_param(self.fc1, prefix + "fc1.", f);
        Linear::for_each_param(self.fc2, prefix + "fc2.", f);
    }

    friend bool operator==(const Expert&, const Expert&) = default;
};

struct MoeLayer {
    std::size_t top_k = 1;
    Matrix gate;  // in x M
    std::vector<Expert> experts;

    MoeLayer() = default;
    MoeLayer(std::size_t in, std::size_t hidden, std::size_t out, std::size_t num_experts, std::size_t k)
        : top_k(k), gate(in, num_experts) {
        require(num_experts >= 1, "moe: expert count must be at least 1", ErrorKind::config);
        require(k >= 1 && k <= num_experts, "moe: K must satisfy 1 <= K <= M", ErrorKind::config);
        experts.reserve(num_experts);
        for (std::size_t m = 0; m < num_experts; ++m) experts.emplace_back(in, hidden, out);
    }

    [[nodiscard]] std::size_t num_experts() const noexcept { return experts.size(); }
    [[nodiscard]] std::size_t in_dim() const noexcept { return gate.rows(); }
    [[nodiscard]] std::size_t out_dim() const noexcept {
        return experts.empty() ? 0 : experts.front().fc2.out_dim();
    }
    [[nodiscard]] std::size_t hidden_dim() const noexcept {
        return experts.empty() ? 0 : experts.front().fc1.out_dim();
    }

    template <class Self, class F>
    static void for_each_param(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "gate", self.gate);
        for (std::size_t m = 0; m < self.experts.size(); ++m)
            Expert::for_each_param(self.experts[m], prefix + "expert" + std::to_string(m) + ".", f);
    }

    friend bool operator==(const MoeLayer&, const MoeLayer&) = default;
};

inline void glorot_init(MoeLayer& layer, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(layer.gate.rows() + layer.gate.cols()));
    for (double& w : layer.gate.values()) w = uniform(rng, -a, a);
    for (auto& e : layer.experts) {
        glorot_init(e.fc1, rng);
        glorot_init(e.fc2, rng);
    }
}

struct GateDecision {
    std::vector<std::size_t> selected;  // ascending
    Vector weights;                     // length M, zero outside `selected`

    friend bool operator==(const GateDecision&, const GateDecision&) = default;
};

/// Top-K masked softmax over precomputed gate logits.
inline GateDecision gate_from_logits(std::span<const double> logits, std::size_t k) {
    const std::size_t m = logits.size();
    require(k >= 1, "gate: K must be at least 1");
    require(k <= m, "gate: K=" + std::to_string(k) + " exceeds expert count M=" + std::to_string(m));
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    GateDecision d;
    d.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(d.selected.begin(), d.selected.end());
    Vector masked(m, -std::numeric_limits<double>::infinity());
    for (std::size_t i : d.selected) masked[i] = logits[i];
    d.weights = softmax(masked);
    return d;
}

inline GateDecision gate(std::span<const double> x, const Matrix& gate_weights, std::size_t k) {
    require(k <= gate_weights.cols(), "gate: K=" + std::to_string(k) + " exceeds expert count M=" +
                                          std::to_string(gate_weights.cols()));
    return gate_from_logits(matvec(x, gate_weights), k);
}

inline Vector expert_forward(const Expert& e, std::span<const double> x) {
    require(e.fc1.out_dim() == e.fc2.in_dim(), "expert: hidden dimensions disagree");
    return linear_forward(e.fc2, gelu(linear_forward(e.fc1, x)));
}

struct MoeOutput {
    Vector output;
    GateDecision decision;
};

/// Intermediates kept for the backward pass; only selected experts appear.
struct MoeTrace {
    Vector input;
    GateDecision decision;
    std::vector<Vector> hidden_pre;   // per selected expert, fc1 output
    std::vector<Vector> expert_out;   // per selected expert
    Vector output;
};

/// Forward pass. `on_expert_eval`, when set, is called with each evaluated expert index.
template <class OnEval>
MoeTrace moe_forward_traced(const MoeLayer& layer, std::span<const double> x, OnEval&& on_expert_eval) {
    require(x.size() == layer.in_dim(), "moe: input length " + std::to_string(x.size()) + " does not match " +
                                            std::to_string(layer.in_dim()));
    MoeTrace t;
    t.input.assign(x.begin(), x.end());
    t.decision = gate(x, layer.gate, layer.top_k);
    t.output.assign(layer.out_dim(), 0.0);
    for (std::size_t m : t.decision.selected) {
        on_expert_eval(m);
        const Expert& e = layer.experts[m];
        Vector pre = linear_forward(e.fc1, x);
        Vector out = linear_forward(e.fc2, gelu(pre));
        const double w = t.decision.weights[m];
        for (std::size_t j = 0; j < out.size(); ++j) t.output[j] += w * out[j];
        t.hidden_pre.push_back(std::move(pre));
        t.expert_out.push_back(std::move(out));
    }
    return t;
}

inline MoeTrace moe_forward_traced(const MoeLayer& layer, std::span<const double> x) {
    return moe_forward_traced(layer, x, [](std::size_t) {});
}

inline MoeOutput moe_forward(const MoeLayer& layer, std::span<const double> x) {
    MoeTrace t = moe_forward_traced(layer, x);
    return {std::move(t.output), std::move(t.decision)};
}

/// Backward pass through a traced forward. Gradients for the selected
/// experts and the gate accumulate into `grads`; the selection set is held
/// fixed, so masked logits and unselected experts receive nothing.
/// `gate_weight_grad`, if nonempty, is an extra dL/dweights term (length M).
inline Vector moe_backward(const MoeLayer& layer, const MoeTrace& t, std::span<const double> dy, MoeLayer& grads,
                           std::span<const double> gate_weight_grad = {}) {
    const std::size_t k = t.decision.selected.size();
    require(dy.size() == layer.out_dim(), "moe backward: upstream gradient has wrong length");
    require(t.decision.weights.size() == layer.num_experts() && k == layer.top_k && t.hidden_pre.size() == k,
            "moe backward: stale gate decision");
    require(grads.num_experts() == layer.num_experts() && grads.gate.same_shape(layer.gate),
            "moe backward: gradient buffer shape mismatch");
    require(gate_weight_grad.empty() || gate_weight_grad.size() == layer.num_experts(),
            "moe backward: gate weight gradient has wrong length");

    Vector dx(layer.in_dim(), 0.0);
    // dL/dw_m for the selected experts, then through the masked softmax.
    Vector dw(k), w(k);
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t m = t.decision.selected[s];
        w[s] = t.decision.weights[m];
        dw[s] = dot(dy, t.expert_out[s]);
        if (!gate_weight_grad.empty()) dw[s] += gate_weight_grad[m];
    }
    const double mean = dot(w, dw);
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t m = t.decision.selected[s];
        const double dlogit = w[s] * (dw[s] - mean);
        if (dlogit == 0.0) continue;
        for (std::size_t i = 0; i < layer.in_dim(); ++i) {
            grads.gate(i, m) += t.input[i] * dlogit;
            dx[i] += layer.gate(i, m) * dlogit;
        }
    }

    Vector dout(dy.size());
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t m = t.decision.selected[s];
        const Expert& e = layer.experts[m];
        Expert& g = grads.experts[m];
        for (std::size_t j = 0; j < dy.size(); ++j) dout[j] = w[s] * dy[j];
        const Vector hidden = gelu(t.hidden_pre[s]);
        Vector dhidden = linear_backward(e.fc2, hidden, dout, g.fc2);
        Vector dpre = gelu_backward(t.hidden_pre[s], dhidden);
        Vector dxe = linear_backward(e.fc1, t.input, dpre, g.fc1);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxe[i];
    }
    return dx;
}

/// Batched trace: rows are grouped by expert so each expert runs once per batch.
struct MoeBatchTrace {
    Matrix input;
    std::vector<GateDecision> decisions;           // per row
    std::vector<std::vector<std::size_t>> routed;  // per expert, routed rows ascending
    std::vector<Matrix> expert_in;                 // per expert, gathered inputs
    std::vector<Matrix> hidden;                    // per expert, gelu(fc1 output)
    std::vector<Matrix> hidden_slope;              // per expert, gelu'(fc1 output)
    std::vector<Matrix> expert_out;                // per expert
    std::vector<std::vector<std::size_t>> slot;    // per row and selected expert: position in routed
    Matrix output;
};

inline MoeBatchTrace moe_forward_batch(const MoeLayer& layer, const Matrix& x) {
    require(x.cols() == layer.in_dim(), "moe: input width " + std::to_string(x.cols()) + " does not match " +
                                            std::to_string(layer.in_dim()));
    const std::size_t m_count = layer.num_experts();
    MoeBatchTrace t;
    t.input = x;
    t.routed.resize(m_count);
    t.slot.resize(x.rows());
    for (std::size_t s = 0; s < x.rows(); ++s) {
        t.decisions.push_back(gate(x.row(s), layer.gate, layer.top_k));
        for (std::size_t m : t.decisions.back().selected) {
            t.slot[s].push_back(t.routed[m].size());
            t.routed[m].push_back(s);
        }
    }
    t.output = Matrix(x.rows(), layer.out_dim());
    for (std::size_t m = 0; m < m_count; ++m) {
        Matrix in(0, layer.in_dim());
        for (std::size_t s : t.routed[m]) in.append_row(x.row(s));
        const Expert& e = layer.experts[m];
        Matrix hidden = linear_forward_batch(e.fc1, in);
        Matrix slope(hidden.rows(), hidden.cols());
        auto hv = hidden.values();
        auto sv = slope.values();
        for (std::size_t i = 0; i < hv.size(); ++i) std::tie(hv[i], sv[i]) = gelu_with_derivative(hv[i]);
        Matrix out = linear_forward_batch(e.fc2, hidden);
        for (std::size_t r = 0; r < t.routed[m].size(); ++r) {
            const std::size_t s = t.routed[m][r];
            const double w = t.decisions[s].weights[m];
            auto y = t.output.row(s);
            auto o = out.row(r);
            for (std::size_t j = 0; j < y.size(); ++j) y[j] += w * o[j];
        }
        t.expert_in.push_back(std::move(in));
        t.hidden.push_back(std::move(hidden));
        t.hidden_slope.push_back(std::move(slope));
        t.expert_out.push_back(std::move(out));
    }
    return t;
}

/// Batched counterpart of moe_backward; `gate_weight_grad` applies to every row.
inline Matrix moe_backward_batch(const MoeLayer& layer, const MoeBatchTrace& t, const Matrix& dy, MoeLayer& grads,
                                 std::span<const double> gate_weight_grad = {}) {
    const std::size_t m_count = layer.num_experts();
    require(dy.rows() == t.input.rows() && dy.cols() == layer.out_dim(),
            "moe backward: upstream gradient has wrong shape");
    require(t.routed.size() == m_count && t.expert_out.size() == m_count, "moe backward: stale gate decision");
    require(grads.num_experts() == m_count && grads.gate.same_shape(layer.gate),
            "moe backward: gradient buffer shape mismatch");
    require(gate_weight_grad.empty() || gate_weight_grad.size() == m_count,
            "moe backward: gate weight gradient has wrong length");

    Matrix dx(t.input.rows(), layer.in_dim());
    for (std::size_t s = 0; s < t.input.rows(); ++s) {
        const GateDecision& d = t.decisions[s];
        const std::size_t k = d.selected.size();
        Vector dw(k), w(k);
        for (std::size_t q = 0; q < k; ++q) {
            const std::size_t m = d.selected[q];
            w[q] = d.weights[m];
            dw[q] = dot(dy.row(s), t.expert_out[m].row(t.slot[s][q]));
            if (!gate_weight_grad.empty()) dw[q] += gate_weight_grad[m];
        }
        const double mean = dot(w, dw);
        auto xs = t.input.row(s);
        auto dxs = dx.row(s);
        for (std::size_t q = 0; q < k; ++q) {
            const std::size_t m = d.selected[q];
            const double dlogit = w[q] * (dw[q] - mean);
            if (dlogit == 0.0) continue;
            for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                grads.gate(i, m) += xs[i] * dlogit;
                dxs[i] += layer.gate(i, m) * dlogit;
            }
        }
    }

    for (std::size_t m = 0; m < m_count; ++m) {
        const auto& rows = t.routed[m];
        if (rows.empty()) continue;
        Matrix dout(rows.size(), layer.out_dim());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double w = t.decisions[rows[r]].weights[m];
            auto src = dy.row(rows[r]);
            auto dst = dout.row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = w * src[j];
        }
        const Expert& e = layer.experts[m];
        Expert& g = grads.experts[m];
        Matrix dpre = linear_backward_batch(e.fc2, t.hidden[m], dout, g.fc2);
        auto dv = dpre.values();
        auto sv = t.hidden_slope[m].values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= sv[i];
        Matrix dxe = linear_backward_batch(e.fc1, t.expert_in[m], dpre, g.fc1);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto dst = dx.row(rows[r]);
            auto src = dxe.row(r);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
    return dx;
}

struct MoeGradient {
    GradTape tape;
    Vector input_grad;
};

/// Backward pass from (layer, x, decision) alone; selected experts are re-run.
inline MoeGradient moe_backward(const MoeLayer& layer, std::span<const double> x, std::span<const double> dy,
                                const GateDecision& decision) {
    require(decision.weights.size() == layer.num_experts() && decision.selected.size() == layer.top_k &&
                x.size() == layer.in_dim(),
            "moe backward: stale gate decision");
    for (std::size_t m : decision.selected) require(m < layer.num_experts(), "moe backward: stale gate decision");
    MoeTrace t;
    t.input.assign(x.begin(), x.end());
    t.decision = decision;
    for (std::size_t m : decision.selected) {
        const Expert& e = layer.experts[m];
        t.hidden_pre.push_back(linear_forward(e.fc1, x));
        t.expert_out.push_back(linear_forward(e.fc2, gelu(t.hidden_pre.back())));
    }
    MoeLayer grads = layer;
    zero_params(grads);
    Vector dx = moe_backward(layer, t, dy, grads);
    return {make_tape(grads), std::move(dx)};
}

struct ExpertLoad {
    Vector frequency;    // fraction of inputs routed to each expert
    Vector mean_weight;  // mean gate weight per expert over all inputs
};

inline ExpertLoad expert_load_stats(std::span<const GateDecision> decisions, std::size_t num_experts) {
    require(!decisions.empty(), "no decisions");
    ExpertLoad load{Vector(num_experts, 0.0), Vector(num_experts, 0.0)};
    for (const auto& d : decisions) {
        require(d.weights.size() == num_experts, "expert_load_stats: decision has wrong expert count");
        for (std::size_t m : d.selected) load.frequency[m] += 1.0;
        for (std::size_t m = 0; m < num_experts; ++m) load.mean_weight[m] += d.weights[m];
    }
    const double n = static_cast<double>(decisions.size());
    for (std::size_t m = 0; m < num_experts; ++m) {
        load.frequency[m] /= n;
        load.mean_weight[m] /= n;
    }
    return load;
}

struct ImportanceLoss {
    double value = 0.0;
    Vector weight_grad;  // dL/d(gate weight), identical for every input in the batch
};

/// coefficient * CV^2 of per-expert summed gate weights over a batch.
inline ImportanceLoss importance_loss(std::span<const GateDecision> decisions, std::size_t num_experts,
                                      double coefficient) {
    ImportanceLoss out{0.0, Vector(num_experts, 0.0)};
    if (coefficient == 0.0 || decisions.empty()) return out;
    Vector imp(num_experts, 0.0);
    for (const auto& d : decisions)
        for (std::size_t m = 0; m < num_experts; ++m) imp[m] += d.weights[m];
    const double mm = static_cast<double>(num_experts);
    const double mu = std::accumulate(imp.begin(), imp.end(), 0.0) / mm;
    double var = 0.0;
    for (double v : imp) var += (v - mu) * (v - mu);
    var /= mm;
    out.value = coefficient * var / (mu * mu);
    for (std::size_t m = 0; m < num_experts; ++m) {
        const double dvar = 2.0 * (imp[m] - mu) / mm;
        const double dmu = 1.0 / mm;
        out.weight_grad[m] = coefficient * (dvar / (mu * mu) - 2.0 * var / (mu * mu * mu) * dmu);
    }
    return out;
}

}  // namespace gzsl
