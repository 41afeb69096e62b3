#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gzsl;

namespace {

BackboneConfig small_backbone() {
    BackboneConfig cfg;
    cfg.feature_dim = 6;
    cfg.neighbours = 8;
    cfg.hidden = {12};
    cfg.num_experts = 4;
    cfg.top_k = 2;
    cfg.expert_hidden_mult = 2;
    return cfg;
}

PointFrame small_scene(std::uint64_t seed, double scale = 0.03) {
    SceneSpec s = SceneSpec{}.scaled(scale);
    s.seed = seed;
    return generate_scene(s);
}

// brute-force k nearest neighbours and descriptor straight from the definition
Vector brute_descriptor(const PointFrame& f, std::size_t i, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (j == i) continue;
        double s = 0.0;
        for (int a = 0; a < 3; ++a) s += (f.points[j][a] - f.points[i][a]) * (f.points[j][a] - f.points[i][a]);
        d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    Vector out(9, 0.0);
    for (int a = 0; a < 3; ++a) out[a] = f.points[i][a];
    for (int a = 0; a < 3; ++a) {
        double m = 0.0;
        for (std::size_t n = 0; n < k; ++n) m += f.points[d[n].second][a] - f.points[i][a];
        m /= static_cast<double>(k);
        double v = 0.0;
        for (std::size_t n = 0; n < k; ++n) {
            const double e = f.points[d[n].second][a] - f.points[i][a] - m;
            v += e * e;
        }
        out[3 + a] = m;
        out[6 + a] = std::sqrt(v / static_cast<double>(k));
    }
    return out;
}

}  // namespace

TEST(Descriptor, SymmetricNeighbourhoodHasZeroMeanOffset) {
    PointFrame f;
    f.push({0, 0, 0}, 2);
    for (int a = 0; a < 3; ++a)
        for (double s : {-1.0, 1.0}) {
            Point3 p{0, 0, 0};
            p[a] = s;
            f.push(p, 2);
        }
    f.push({9, 9, 9}, 2);
    const Vector d = point_descriptor(f, 0, 6);
    for (int a = 0; a < 3; ++a) {
        EXPECT_DOUBLE_EQ(d[a], 0.0);
        EXPECT_DOUBLE_EQ(d[3 + a], 0.0);
        EXPECT_NEAR(d[6 + a], std::sqrt(2.0 / 6.0), 1e-15);
    }
}

TEST(Descriptor, SingleNeighbour) {
    PointFrame f;
    f.push({0, 0, 0}, 2);
    f.push({1, 2, 3}, 3);
    EXPECT_EQ(point_descriptor(f, 0, 1), (Vector{0, 0, 0, 1, 2, 3, 0, 0, 0}));
    EXPECT_EQ(point_descriptor(f, 1, 1), (Vector{1, 2, 3, -1, -2, -3, 0, 0, 0}));
    EXPECT_THROW(point_descriptor(f, 0, 2), Error);
}

TEST(Descriptor, GridSearchMatchesBruteForce) {
    const PointFrame f = small_scene(11);
    const Matrix d = frame_descriptors(f, 8);
    ASSERT_EQ(d.rows(), f.size());
    for (std::size_t i = 0; i < f.size(); i += 7) {
        const Vector ref = brute_descriptor(f, i, 8);
        for (std::size_t c = 0; c < 9; ++c) EXPECT_NEAR(d(i, c), ref[c], 1e-12) << i << "," << c;
    }
}

TEST(Descriptor, FloorThicknessIsTheNoiseLevel) {
    SceneSpec s = SceneSpec{}.scaled(0.1);
    s.seed = 3;
    const PointFrame f = generate_scene(s);
    const Matrix d = frame_descriptors(f, 16);
    // median, since floor points next to walls and objects pick up their neighbours
    std::vector<double> std_z;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f.labels[i] == covered::kFloor) std_z.push_back(d(i, 8));
    std::nth_element(std_z.begin(), std_z.begin() + static_cast<std::ptrdiff_t>(std_z.size() / 2), std_z.end());
    const double median_std_z = std_z[std_z.size() / 2];
    EXPECT_GT(median_std_z, 0.5 * s.noise_sigma);
    EXPECT_LT(median_std_z, 2.0 * s.noise_sigma);
}

TEST(Backbone, ZeroFinalLayerGivesItsBias) {
    BackboneParams p = init_backbone(small_backbone(), 1);
    Linear& last = std::get<Linear>(p.mlp.layers.back());
    last.weight.fill(0.0);
    for (std::size_t j = 0; j < last.bias.cols(); ++j) last.bias(0, j) = 0.25 * static_cast<double>(j);
    const FeatureBatch fb = extract_features(p, small_scene(2));
    ASSERT_EQ(fb.dim(), 6u);
    for (std::size_t i = 0; i < fb.size(); ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(fb.features(i, j), 0.25 * static_cast<double>(j));
}

TEST(Backbone, ExtractFeaturesMatchesHandComposition) {
    std::mt19937_64 rng(4);
    BackboneParams p = init_backbone(small_backbone(), 5);
    testutil::randomize(p.input_mean, rng, 0.1);
    for (double& v : p.input_scale.values()) v = 0.5 + std::abs(testutil::random_vector(rng, 1)[0]);
    const PointFrame f = small_scene(6);
    const FeatureBatch fb = extract_features(p, f);
    ASSERT_EQ(fb.size(), f.size());
    EXPECT_EQ(fb.labels, f.labels);
    for (std::size_t i = 0; i < f.size(); i += 5) {
        Vector x = brute_descriptor(f, i, p.neighbours);
        for (std::size_t c = 0; c < 9; ++c) x[c] = (x[c] - p.input_mean(0, c)) * p.input_scale(0, c);
        const Vector ref = oracle::dense_stack(p.mlp, x);
        for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(fb.features(i, j), ref[j], 1e-12);
        EXPECT_EQ(fb.provenance[i], Provenance::real);
    }
}

TEST(Backbone, EmptyFrameGivesEmptyBatch) {
    const BackboneParams p = init_backbone(small_backbone(), 1);
    const FeatureBatch fb = extract_features(p, PointFrame{});
    EXPECT_TRUE(fb.empty());
    EXPECT_EQ(fb.dim(), 6u);
}

TEST(BackboneTraining, ZeroEpochsReturnsInitialParams) {
    BackboneConfig cfg = small_backbone();
    cfg.epochs = 0;
    const std::vector<PointFrame> frames{small_scene(7)};
    const auto a = train_backbone(frames, covered::default_split(), cfg, AdamConfig{}, 9);
    const auto b = train_backbone(frames, covered::default_split(), cfg, AdamConfig{}, 9);
    EXPECT_TRUE(a.loss_history.empty());
    EXPECT_EQ(a.params, b.params);
    BackboneParams fresh = init_backbone(cfg, derive_seed(9, "backbone-init"));
    EXPECT_EQ(a.params.mlp, fresh.mlp);
}

TEST(BackboneTraining, LossDecreasesAndUnseenPointsAreNeverRead) {
    BackboneConfig cfg = small_backbone();
    cfg.epochs = 5;
    const std::vector<PointFrame> frames{small_scene(8, 0.05), small_scene(9, 0.05)};
    std::size_t seen = 0, unseen = 0;
    const auto split = covered::default_split();
    const auto r = train_backbone(frames, split, cfg, AdamConfig{}, 10, [&](ClassId c) {
        (split.is_unseen(c) ? unseen : seen) += 1;
    });
    EXPECT_EQ(unseen, 0u);
    EXPECT_EQ(seen, 2u * (670 + 90 + 140));
    ASSERT_EQ(r.loss_history.size(), 5u);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
    EXPECT_TRUE(params_finite(r.params.mlp));
}

TEST(BackboneTraining, NoSeenPoints) {
    PointFrame f;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 40; ++i) {
        const auto v = testutil::random_vector(rng, 3);
        f.push({v[0], v[1], v[2]}, i % 2 ? covered::kFloor : covered::kAgv);
    }
    const std::vector<PointFrame> frames{f};
    try {
        (void)train_backbone(frames, covered::default_split(), small_backbone(), AdamConfig{}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no seen points");
    }
}
