#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace gzsl;

namespace {

std::string proto_text(std::size_t dim, const std::vector<int>& ids, std::size_t odd_dim = 0, int odd_id = -1) {
    std::mt19937_64 rng(1);
    std::ostringstream s;
    s << "GZSL-PROTO v1\n";
    for (int id : ids) {
        s << id << " class" << id;
        const std::size_t d = id == odd_id ? odd_dim : dim;
        for (double v : testutil::random_vector(rng, d)) s << ' ' << v;
        s << '\n';
    }
    return s.str();
}

template <class F>
std::string error_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Prototypes, LoadNormalizes) {
    std::istringstream in(proto_text(300, {1, 2, 3, 4, 5}));
    const auto t = parse_prototypes(in, covered::default_split());
    EXPECT_EQ(t.dim, 300u);
    for (const auto& [id, v] : t.vectors) EXPECT_NEAR(l2_norm(v), 1.0, 1e-12) << id;
}

TEST(Prototypes, LoadFromFile) {
    const auto dir = testutil::temp_dir("protos");
    {
        std::ofstream out(dir / "p.txt");
        out << proto_text(8, {1, 2, 3, 4, 5});
    }
    const auto t = load_prototypes(dir / "p.txt", covered::default_split());
    EXPECT_EQ(t.vectors.size(), 5u);
    write_prototypes(t, dir / "q.txt");
    const auto u = load_prototypes(dir / "q.txt", covered::default_split());
    for (const auto& [id, v] : t.vectors)
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(u.at(id)[i], v[i], 1e-15);
}

TEST(Prototypes, DimensionMismatch) {
    std::istringstream in(proto_text(300, {1, 2, 3, 4, 5}, 200, 4));
    EXPECT_NE(error_of([&] { parse_prototypes(in, covered::default_split()); }).find("dimension mismatch"),
              std::string::npos);
}

TEST(Prototypes, DuplicateId) {
    std::istringstream in(proto_text(4, {1, 2, 2, 3, 4, 5}));
    EXPECT_NE(error_of([&] { parse_prototypes(in, covered::default_split()); }).find("duplicate class id"),
              std::string::npos);
}

TEST(Prototypes, MissingClass) {
    std::istringstream in(proto_text(4, {1, 2, 3, 4, 5}));
    SplitConfig split{{2, 3, 4}, {1, 7}};
    EXPECT_NE(error_of([&] { parse_prototypes(in, split); }).find("missing prototype"), std::string::npos);
}

TEST(Prototypes, SynthesisIsDeterministic) {
    EXPECT_EQ(synthesize_prototype("wall", 64, 42), synthesize_prototype("wall", 64, 42));
    EXPECT_NE(synthesize_prototype("wall", 64, 42), synthesize_prototype("wall", 64, 43));
    EXPECT_NE(synthesize_prototype("wall", 64, 42), synthesize_prototype("floor", 64, 42));
}

TEST(Prototypes, SynthesizedAreNearlyOrthogonal) {
    const auto t = synthesize_prototypes(covered::class_names(), 64, 42, covered::default_split());
    for (const auto& [a, va] : t.vectors) {
        EXPECT_NEAR(l2_norm(va), 1.0, 1e-12);
        for (const auto& [b, vb] : t.vectors)
            if (a < b) EXPECT_LT(std::abs(dot(va, vb)), 0.5) << a << "," << b;
    }
}

TEST(Prototypes, LowDimensionalSynthesisSucceeds) {
    const auto t = synthesize_prototypes(covered::class_names(), 2, 42, covered::default_split());
    EXPECT_EQ(t.dim, 2u);
    for (const auto& [id, v] : t.vectors) EXPECT_NEAR(l2_norm(v), 1.0, 1e-12);
}

TEST(Prototypes, DuplicateNamesRejected) {
    EXPECT_THROW(synthesize_prototypes({{1, "a"}, {2, "a"}}, 8, 1, SplitConfig{{1}, {2}}), Error);
}

TEST(Prototypes, OverlappingSplitRejected) {
    EXPECT_THROW(synthesize_prototypes(covered::class_names(), 8, 1, SplitConfig{{1, 2}, {2}}), Error);
}
