#pragma once

// Sequential stacks of linear maps, GELU and MoE layers, with layer-wise
// forward/backward. Every network in the pipeline is one of these.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "moe.hpp"

namespace gzsl {

struct GeluLayer {
    friend bool operator==(const GeluLayer&, const GeluLayer&) = default;
};

using Layer = std::variant<Linear, GeluLayer, MoeLayer>;

inline std::size_t layer_in_dim(const Layer& l) {
    return std::visit(
        [](const auto& v) -> std::size_t {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GeluLayer>) return 0;
            else return v.in_dim();
        },
        l);
}

inline std::size_t layer_out_dim(const Layer& l) {
    return std::visit(
        [](const auto& v) -> std::size_t {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GeluLayer>) return 0;
            else return v.out_dim();
        },
        l);
}

inline const char* layer_kind(const Layer& l) {
    return std::visit(
        [](const auto& v) -> const char* {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Linear>) return "linear";
            else if constexpr (std::is_same_v<T, GeluLayer>) return "gelu";
            else return "moe";
        },
        l);
}

struct Sequential {
    std::vector<Layer> layers;

    template <class Self, class F>
    static void for_each_param(Self& self, const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < self.layers.size(); ++i) {
            const std::string p = prefix + "layer" + std::to_string(i) + ".";
            std::visit(
                [&](auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (!std::is_same_v<T, GeluLayer>) T::for_each_param(v, p, f);
                },
                self.layers[i]);
        }
    }

    [[nodiscard]] std::size_t out_dim() const {
        for (auto it = layers.rbegin(); it != layers.rend(); ++it)
            if (layer_out_dim(*it) != 0) return layer_out_dim(*it);
        return 0;
    }
    [[nodiscard]] std::size_t in_dim() const {
        for (const auto& l : layers)
            if (layer_in_dim(l) != 0) return layer_in_dim(l);
        return 0;
    }

    friend bool operator==(const Sequential&, const Sequential&) = default;
};

inline void glorot_init(Sequential& net, Rng& rng) {
    for (auto& l : net.layers)
        std::visit(
            [&](auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (!std::is_same_v<T, GeluLayer>) glorot_init(v, rng);
            },
            l);
}

/// Checks that adjacent layer dimensions agree; errors name the offending stage.
inline void validate_stack(const Sequential& net) {
    std::size_t dim = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::size_t in = layer_in_dim(net.layers[i]);
        if (in != 0) {
            require(dim == 0 || dim == in, "stack stage " + std::to_string(i) + " (" + layer_kind(net.layers[i]) +
                                               "): expects input dim " + std::to_string(in) + ", previous stage yields " +
                                               std::to_string(dim));
            dim = layer_out_dim(net.layers[i]);
        }
        if (const auto* moe = std::get_if<MoeLayer>(&net.layers[i])) {
            require(moe->top_k >= 1 && moe->top_k <= moe->num_experts(),
                    "stack stage " + std::to_string(i) + " (moe): K must satisfy 1 <= K <= M");
        }
    }
}

struct LayerTrace {
    Vector input;
    std::optional<MoeTrace> moe;
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Vector output;

    [[nodiscard]] std::vector<GateDecision> decisions() const {
        std::vector<GateDecision> out;
        for (const auto& l : layers)
            if (l.moe) out.push_back(l.moe->decision);
        return out;
    }
};

inline ForwardTrace forward_traced(const Sequential& net, std::span<const double> x) {
    ForwardTrace t;
    t.layers.reserve(net.layers.size());
    Vector cur(x.begin(), x.end());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::size_t in = layer_in_dim(net.layers[i]);
        require(in == 0 || in == cur.size(), "stack stage " + std::to_string(i) + " (" + layer_kind(net.layers[i]) +
                                                 "): expects input dim " + std::to_string(in) + ", got " +
                                                 std::to_string(cur.size()));
        LayerTrace lt;
        Vector next = std::visit(
            [&](const auto& v) -> Vector {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Linear>) return linear_forward(v, cur);
                else if constexpr (std::is_same_v<T, GeluLayer>) return gelu(cur);
                else {
                    lt.moe = moe_forward_traced(v, cur);
                    return lt.moe->output;
                }
            },
            net.layers[i]);
        if (!lt.moe) lt.input = std::move(cur);
        t.layers.push_back(std::move(lt));
        cur = std::move(next);
    }
    t.output = std::move(cur);
    return t;
}

inline Vector forward(const Sequential& net, std::span<const double> x) {
    Vector cur(x.begin(), x.end());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::size_t in = layer_in_dim(net.layers[i]);
        require(in == 0 || in == cur.size(), "stack stage " + std::to_string(i) + " (" + layer_kind(net.layers[i]) +
                                                 "): expects input dim " + std::to_string(in) + ", got " +
                                                 std::to_string(cur.size()));
        cur = std::visit(
            [&](const auto& v) -> Vector {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Linear>) return linear_forward(v, cur);
                else if constexpr (std::is_same_v<T, GeluLayer>) return gelu(cur);
                else return moe_forward(v, cur).output;
            },
            net.layers[i]);
    }
    return cur;
}

struct StackOutput {
    Vector output;
    std::vector<GateDecision> decisions;
};

/// Sequential composition returning every MoE gate decision in layer order.
inline StackOutput moe_stack_forward(const Sequential& net, std::span<const double> x) {
    ForwardTrace t = forward_traced(net, x);
    return {std::move(t.output), t.decisions()};
}

/// Back-propagates dy through a traced forward pass, accumulating into
/// `grads` (same structure as `net`). `gate_weight_grads`, when given, holds
/// one extra dL/dweights vector per MoE layer in order.
inline Vector backward(const Sequential& net, const ForwardTrace& t, std::span<const double> dy, Sequential& grads,
                       const std::vector<Vector>* gate_weight_grads = nullptr) {
    require(t.layers.size() == net.layers.size() && grads.layers.size() == net.layers.size(),
            "backward: trace does not match network");
    std::size_t moe_index = 0;
    for (const auto& l : net.layers) moe_index += std::holds_alternative<MoeLayer>(l) ? 1 : 0;
    Vector g(dy.begin(), dy.end());
    for (std::size_t i = net.layers.size(); i-- > 0;) {
        const LayerTrace& lt = t.layers[i];
        g = std::visit(
            [&](const auto& v) -> Vector {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Linear>) {
                    return linear_backward(v, lt.input, g, std::get<Linear>(grads.layers[i]));
                } else if constexpr (std::is_same_v<T, GeluLayer>) {
                    return gelu_backward(lt.input, g);
                } else {
                    --moe_index;
                    std::span<const double> extra;
                    if (gate_weight_grads && moe_index < gate_weight_grads->size())
                        extra = (*gate_weight_grads)[moe_index];
                    return moe_backward(v, *lt.moe, g, std::get<MoeLayer>(grads.layers[i]), extra);
                }
            },
            net.layers[i]);
    }
    return g;
}

struct BatchLayerTrace {
    Matrix input;
    std::optional<MoeBatchTrace> moe;
};

/// Row-batched forward trace; same values as forward_traced row by row.
struct BatchTrace {
    std::vector<BatchLayerTrace> layers;
    Matrix output;

    [[nodiscard]] std::vector<std::vector<GateDecision>> decisions() const {
        std::vector<std::vector<GateDecision>> out;
        for (const auto& l : layers)
            if (l.moe) out.push_back(l.moe->decisions);
        return out;
    }
};

inline BatchTrace forward_batch(const Sequential& net, const Matrix& x) {
    BatchTrace t;
    t.layers.reserve(net.layers.size());
    Matrix cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::size_t in = layer_in_dim(net.layers[i]);
        require(in == 0 || in == cur.cols(), "stack stage " + std::to_string(i) + " (" + layer_kind(net.layers[i]) +
                                                 "): expects input dim " + std::to_string(in) + ", got " +
                                                 std::to_string(cur.cols()));
        BatchLayerTrace lt;
        Matrix next = std::visit(
            [&](const auto& v) -> Matrix {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Linear>) return linear_forward_batch(v, cur);
                else if constexpr (std::is_same_v<T, GeluLayer>) return gelu(cur);
                else {
                    lt.moe = moe_forward_batch(v, cur);
                    return lt.moe->output;
                }
            },
            net.layers[i]);
        if (!lt.moe) lt.input = std::move(cur);
        t.layers.push_back(std::move(lt));
        cur = std::move(next);
    }
    t.output = std::move(cur);
    return t;
}

inline Matrix backward_batch(const Sequential& net, const BatchTrace& t, const Matrix& dy, Sequential& grads,
                             const std::vector<Vector>* gate_weight_grads = nullptr) {
    require(t.layers.size() == net.layers.size() && grads.layers.size() == net.layers.size(),
            "backward: trace does not match network");
    std::size_t moe_index = 0;
    for (const auto& l : net.layers) moe_index += std::holds_alternative<MoeLayer>(l) ? 1 : 0;
    Matrix g = dy;
    for (std::size_t i = net.layers.size(); i-- > 0;) {
        const BatchLayerTrace& lt = t.layers[i];
        g = std::visit(
            [&](const auto& v) -> Matrix {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Linear>) {
                    return linear_backward_batch(v, lt.input, g, std::get<Linear>(grads.layers[i]));
                } else if constexpr (std::is_same_v<T, GeluLayer>) {
                    return gelu_backward(lt.input, g);
                } else {
                    --moe_index;
                    std::span<const double> extra;
                    if (gate_weight_grads && moe_index < gate_weight_grads->size())
                        extra = (*gate_weight_grads)[moe_index];
                    return moe_backward_batch(v, *lt.moe, g, std::get<MoeLayer>(grads.layers[i]), extra);
                }
            },
            net.layers[i]);
    }
    return g;
}

inline Sequential zeros_like(const Sequential& net) {
    Sequential z = net;
    zero_params(z);
    return z;
}

}  // namespace gzsl
