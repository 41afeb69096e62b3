#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace gzsl;

namespace {

MoeLayer random_layer(std::mt19937_64& rng, std::size_t in, std::size_t hidden, std::size_t out, std::size_t m,
                      std::size_t k) {
    MoeLayer layer(in, hidden, out, m, k);
    testutil::randomize_params(layer, rng);
    return layer;
}

// random input whose routing margin is at least `margin`
Vector input_away_from_ties(const MoeLayer& layer, std::mt19937_64& rng, double margin = 1e-3) {
    for (;;) {
        Vector x = testutil::random_vector(rng, layer.in_dim());
        if (oracle::routing_margin(oracle::gate_logits(layer, x), layer.top_k) >= margin) return x;
    }
}

}  // namespace

TEST(Gate, TopTwoOfFour) {
    const GateDecision d = gate_from_logits(Vector{1, 2, 3, 4}, 2);
    EXPECT_EQ(d.selected, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(d.weights[0], 0.0);
    EXPECT_EQ(d.weights[1], 0.0);
    EXPECT_NEAR(d.weights[2], 1.0 / (1.0 + std::exp(1.0)), 1e-12);
    EXPECT_NEAR(d.weights[3], std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-12);
    EXPECT_NEAR(d.weights[2], 0.2689, 1e-4);
}

TEST(Gate, FullSelectionIsPlainSoftmax) {
    const GateDecision d = gate_from_logits(Vector{0, 0, 0}, 3);
    for (double w : d.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
}

TEST(Gate, TiesGoToLowestIndex) {
    const GateDecision d = gate_from_logits(Vector{5, 5, 5}, 2);
    EXPECT_EQ(d.selected, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(d.weights, (Vector{0.5, 0.5, 0.0}));

    const GateDecision d2 = gate_from_logits(Vector{1, 7, 3, 7, 7}, 2);
    EXPECT_EQ(d2.selected, (std::vector<std::size_t>{1, 3}));
}

TEST(Gate, InvalidK) {
    const Matrix wg(3, 4);
    EXPECT_THROW((void)gate(Vector{1, 2, 3}, wg, 5), Error);
    EXPECT_THROW((void)gate(Vector{1, 2, 3}, wg, 0), Error);
    EXPECT_THROW(MoeLayer(3, 4, 2, 4, 5), Error);
}

TEST(Gate, RandomDecisionsSatisfyInvariants) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 500; ++t) {
        const std::size_t m = 2 + rng() % 30, k = 1 + rng() % m;
        Vector l = testutil::random_vector(rng, m);
        if (t % 3 == 0)
            for (double& v : l) v = std::round(v);  // many exact ties
        const GateDecision d = gate_from_logits(l, k);
        std::size_t nonzero = 0;
        double sum = 0.0;
        for (double w : d.weights) {
            nonzero += w != 0.0;
            sum += w;
        }
        EXPECT_EQ(nonzero, k);
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(d.weights, oracle::gate_weights(l, k));
    }
}

TEST(Expert, ZeroParamsGiveZero) {
    Expert e(3, 6, 2);
    for (double v : expert_forward(e, Vector{1, -2, 3})) EXPECT_EQ(v, 0.0);
}

TEST(Expert, IdentityWeightsGiveGelu) {
    Expert e(2, 2, 2);
    e.fc1.weight = Matrix::identity(2);
    e.fc2.weight = Matrix::identity(2);
    const Vector y = expert_forward(e, Vector{1, -1});
    EXPECT_NEAR(y[0], 0.84119, 1e-5);
    EXPECT_NEAR(y[1], -0.15881, 1e-5);
}

TEST(Expert, MatchesStraightLineOracle) {
    std::mt19937_64 rng(4);
    Expert e(3, 5, 2);
    testutil::randomize_params(e, rng);
    const Vector x = testutil::random_vector(rng, 3);
    const Vector y = expert_forward(e, x);
    const Vector ref = oracle::expert(e, x);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y[j], ref[j], 1e-12);
    EXPECT_THROW((void)expert_forward(e, Vector{1, 2}), Error);
}

TEST(MoeForward, SingleSelectedExpertIsExact) {
    std::mt19937_64 rng(8);
    MoeLayer layer = random_layer(rng, 3, 4, 2, 2, 1);
    layer.gate.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) layer.gate(i, 0) = 10.0;
    const Vector x{1.0, 0.5, 0.25};
    const MoeOutput out = moe_forward(layer, x);
    EXPECT_EQ(out.decision.selected, (std::vector<std::size_t>{0}));
    EXPECT_EQ(out.output, expert_forward(layer.experts[0], x));
}

TEST(MoeForward, UniformGateAveragesExperts) {
    std::mt19937_64 rng(9);
    MoeLayer layer = random_layer(rng, 3, 4, 2, 2, 2);
    layer.gate.fill(0.0);
    const Vector x{0.3, -0.7, 1.1};
    const Vector y = moe_forward(layer, x).output;
    const Vector e0 = expert_forward(layer.experts[0], x), e1 = expert_forward(layer.experts[1], x);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y[j], 0.5 * e0[j] + 0.5 * e1[j], 1e-15);
}

TEST(MoeForward, MatchesDenseMaskedOracle) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 50; ++t) {
        const MoeLayer layer = random_layer(rng, 6, 12, 5, 8, 2);
        const Vector x = testutil::random_vector(rng, 6);
        const Vector y = moe_forward(layer, x).output;
        const Vector ref = oracle::dense_moe(layer, x);
        for (std::size_t j = 0; j < y.size(); ++j) EXPECT_NEAR(y[j], ref[j], 1e-9);
    }
}

TEST(MoeForward, OnlySelectedExpertsAreEvaluated) {
    std::mt19937_64 rng(12);
    const MoeLayer layer = random_layer(rng, 4, 6, 3, 8, 2);
    std::vector<std::size_t> seen;
    const MoeTrace t = moe_forward_traced(layer, testutil::random_vector(rng, 4), [&](std::size_t m) { seen.push_back(m); });
    EXPECT_EQ(seen, t.decision.selected);
}

TEST(MoeBackward, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(13);
    const MoeLayer layer = random_layer(rng, 4, 6, 3, 4, 2);
    const Vector x = testutil::random_vector(rng, 4);
    const MoeGradient g = moe_backward(layer, x, Vector(3, 0.0), moe_forward(layer, x).decision);
    for (const auto& [id, m] : g.tape.entries())
        for (double v : m.values()) EXPECT_EQ(v, 0.0) << id;
    for (double v : g.input_grad) EXPECT_EQ(v, 0.0);
}

TEST(MoeBackward, UnselectedExpertsGetExactlyZero) {
    std::mt19937_64 rng(14);
    const MoeLayer layer = random_layer(rng, 4, 6, 3, 6, 2);
    const Vector x = testutil::random_vector(rng, 4);
    const GateDecision d = moe_forward(layer, x).decision;
    const MoeGradient g = moe_backward(layer, x, testutil::random_vector(rng, 3), d);
    for (std::size_t m = 0; m < 6; ++m) {
        if (std::find(d.selected.begin(), d.selected.end(), m) != d.selected.end()) continue;
        const std::string p = "expert" + std::to_string(m) + ".";
        for (const char* n : {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"})
            for (double v : g.tape.at(p + n).values()) EXPECT_EQ(v, 0.0);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.tape.at("gate").values()[i * 6 + m], 0.0);
    }
}

TEST(MoeBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(15);
    for (int t = 0; t < 10; ++t) {
        MoeLayer layer = random_layer(rng, 4, 5, 3, 4, 2);
        Vector x = input_away_from_ties(layer, rng);
        const Vector c = testutil::random_vector(rng, 3);
        const MoeGradient g = moe_backward(layer, x, c, moe_forward(layer, x).decision);
        auto probes = testutil::param_probes(layer, g.tape);
        probes.push_back({"x", x, g.input_grad});
        const auto r = grad_check([&] { return dot(moe_forward(layer, x).output, c); }, probes, 1e-4);
        EXPECT_TRUE(r.passed) << r.worst << " " << r.max_rel_error;
    }
}

TEST(MoeBackward, StaleDecisionIsAnError) {
    std::mt19937_64 rng(16);
    const MoeLayer layer = random_layer(rng, 4, 5, 3, 4, 2);
    const Vector x = testutil::random_vector(rng, 4);
    GateDecision d = moe_forward(layer, x).decision;
    d.weights.pop_back();
    EXPECT_THROW((void)moe_backward(layer, x, Vector(3, 1.0), d), Error);
}

TEST(MoeStack, EmptyIsIdentityAndSingleLayerMatches) {
    const Vector x{1, 2, 3};
    EXPECT_EQ(moe_stack_forward(Sequential{}, x).output, x);

    std::mt19937_64 rng(17);
    const MoeLayer layer = random_layer(rng, 3, 4, 2, 4, 2);
    const StackOutput s = moe_stack_forward(Sequential{{layer}}, x);
    const MoeOutput o = moe_forward(layer, x);
    EXPECT_EQ(s.output, o.output);
    ASSERT_EQ(s.decisions.size(), 1u);
    EXPECT_EQ(s.decisions[0], o.decision);
}

TEST(MoeStack, TwoLayersMatchComposedDenseOracle) {
    std::mt19937_64 rng(18);
    Sequential net{{random_layer(rng, 5, 8, 6, 8, 2), GeluLayer{}, random_layer(rng, 6, 8, 4, 8, 2)}};
    for (int t = 0; t < 20; ++t) {
        const Vector x = testutil::random_vector(rng, 5);
        const StackOutput s = moe_stack_forward(net, x);
        EXPECT_EQ(s.decisions.size(), 2u);
        const Vector ref = oracle::dense_stack(net, x);
        for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(s.output[j], ref[j], 1e-9);
    }
}

TEST(MoeStack, DimensionMismatchNamesTheStage) {
    std::mt19937_64 rng(19);
    Sequential net{{random_layer(rng, 5, 8, 6, 4, 2), random_layer(rng, 7, 8, 4, 4, 2)}};
    try {
        (void)moe_stack_forward(net, Vector(5, 0.1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos) << e.what();
    }
}

TEST(MoeBatch, MatchesPerSamplePathExactly) {
    std::mt19937_64 rng(20);
    Sequential net{{Linear(5, 6), GeluLayer{}, random_layer(rng, 6, 10, 6, 8, 2), GeluLayer{},
                    random_layer(rng, 6, 10, 3, 8, 3)}};
    testutil::randomize_params(std::get<Linear>(net.layers[0]), rng);
    Matrix x(0, 5), dy(0, 3);
    for (int r = 0; r < 17; ++r) {
        x.append_row(testutil::random_vector(rng, 5));
        dy.append_row(testutil::random_vector(rng, 3));
    }
    Sequential g1 = zeros_like(net), g2 = zeros_like(net);
    const BatchTrace bt = forward_batch(net, x);
    const Matrix dx = backward_batch(net, bt, dy, g2);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const ForwardTrace t = forward_traced(net, x.row(r));
        EXPECT_EQ(Vector(bt.output.row(r).begin(), bt.output.row(r).end()), t.output);
        const Vector dxr = backward(net, t, dy.row(r), g1);
        for (std::size_t i = 0; i < dxr.size(); ++i) EXPECT_EQ(dx(r, i), dxr[i]);
    }
    const auto a = param_list(std::as_const(g1));
    const auto b = param_list(std::as_const(g2));
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k]->size(); ++i) EXPECT_NEAR(a[k]->values()[i], b[k]->values()[i], 1e-12);
}

TEST(LoadStats, FixedSelection) {
    GateDecision d{{0, 1}, Vector{0.5, 0.5, 0.0, 0.0}};
    const std::vector<GateDecision> ds(10, d);
    const ExpertLoad load = expert_load_stats(ds, 4);
    EXPECT_EQ(load.frequency, (Vector{1, 1, 0, 0}));
    EXPECT_EQ(load.mean_weight, (Vector{0.5, 0.5, 0, 0}));
}

TEST(LoadStats, FrequenciesSumToK) {
    std::mt19937_64 rng(22);
    std::vector<GateDecision> ds;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 100; ++i) ds.push_back(gate_from_logits(Vector{u(rng), u(rng), u(rng), u(rng)}, 2));
    const ExpertLoad load = expert_load_stats(ds, 4);
    double total = 0.0;
    for (double f : load.frequency) {
        EXPECT_GT(f, 0.0);
        EXPECT_LT(f, 1.0);
        total += f;
    }
    EXPECT_EQ(total, 2.0);
}

TEST(LoadStats, EmptyIsAnError) {
    try {
        (void)expert_load_stats(std::vector<GateDecision>{}, 4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no decisions");
    }
}

TEST(ImportanceLoss, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(23);
    std::vector<GateDecision> ds;
    for (int i = 0; i < 6; ++i) ds.push_back(gate_from_logits(testutil::random_vector(rng, 5), 2));
    const ImportanceLoss l = importance_loss(ds, 5, 0.7);
    EXPECT_GT(l.value, 0.0);
    // perturbing one expert's weight in every decision moves its importance by n*h
    for (std::size_t m = 0; m < 5; ++m) {
        auto shifted = [&](double h) {
            auto copy = ds;
            for (auto& d : copy) d.weights[m] += h;
            return importance_loss(copy, 5, 0.7).value;
        };
        const double fd = (shifted(1e-6) - shifted(-1e-6)) / 2e-6;
        EXPECT_NEAR(fd, l.weight_grad[m] * ds.size(), 1e-6);
    }
}
