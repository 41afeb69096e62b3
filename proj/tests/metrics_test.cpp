#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace gzsl;

namespace {

ConfusionMatrix from_counts(std::vector<ClassId> classes, const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(std::move(classes));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) cm.add(r, c, rows[r][c]);
    return cm;
}

SplitConfig two_class_split() { return SplitConfig{{1}, {2}}; }

}  // namespace

TEST(Iou, TwoClassExample) {
    const auto cm = from_counts({1, 2}, {{3, 1}, {1, 5}});
    const auto iou = iou_per_class(cm);
    EXPECT_DOUBLE_EQ(*iou[0], 0.6);
    EXPECT_DOUBLE_EQ(*iou[1], 5.0 / 7.0);
    EXPECT_NEAR(*miou_subsets(cm, two_class_split()).all, 0.6571, 1e-4);
}

TEST(Iou, PerfectDiagonal) {
    const auto cm = from_counts({1, 2, 3}, {{4, 0, 0}, {0, 2, 0}, {0, 0, 9}});
    for (const auto& v : iou_per_class(cm)) EXPECT_EQ(*v, 1.0);
}

TEST(Iou, AbsentClassIsUndefinedAndExcluded) {
    const auto cm = from_counts({1, 2, 3}, {{3, 1, 0}, {1, 5, 0}, {0, 0, 0}});
    const auto iou = iou_per_class(cm);
    EXPECT_FALSE(iou[2].has_value());
    EXPECT_NEAR(*miou_subsets(cm, SplitConfig{{1, 3}, {2}}).seen, 0.6, 1e-15);
}

TEST(Iou, SubsetMeans) {
    // IoU: class1 = 0.7, class2 = 0.3, class3 = 0.7
    const auto cm = from_counts({1, 2, 3}, {{49, 21, 0}, {0, 18, 0}, {0, 21, 49}});
    const auto iou = iou_per_class(cm);
    EXPECT_NEAR(*iou[0], 0.7, 1e-15);
    EXPECT_NEAR(*iou[1], 0.3, 1e-15);
    EXPECT_NEAR(*iou[2], 0.7, 1e-15);
    const auto m = miou_subsets(cm, SplitConfig{{1, 3}, {2}});
    EXPECT_NEAR(*m.seen, 0.7, 1e-15);
    EXPECT_NEAR(*m.unseen, 0.3, 1e-15);
    EXPECT_NEAR(*m.all, 17.0 / 30.0, 1e-15);
}

TEST(Iou, SplitMustCoverEveryClass) {
    const auto cm = from_counts({1, 2}, {{1, 0}, {0, 1}});
    EXPECT_THROW((void)miou_subsets(cm, SplitConfig{{1}, {}}), Error);
}

TEST(HarmonicMean, Examples) {
    EXPECT_NEAR(harmonic_mean(89.3, 64.96), 75.21, 0.01);
    EXPECT_DOUBLE_EQ(harmonic_mean(0.4, 0.4), 0.4);
    EXPECT_EQ(harmonic_mean(0.7, 0.0), 0.0);
    EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
    EXPECT_THROW(harmonic_mean(-0.1, 0.5), Error);
    EXPECT_FALSE(harmonic_mean(MaybeValue{}, MaybeValue{0.5}).has_value());
}

TEST(Report, TwoClassExample) {
    const auto cm = from_counts({1, 2}, {{3, 1}, {1, 5}});
    const auto r = build_report(cm, two_class_split(), {{1, "a"}, {2, "b"}});
    EXPECT_EQ(r.total, 10u);
    EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.8);
    EXPECT_DOUBLE_EQ(*r.acc_seen, 0.75);
    EXPECT_DOUBLE_EQ(*r.acc_unseen, 5.0 / 6.0);
    EXPECT_NEAR(*r.hm_accuracy, 0.7895, 1e-4);
    EXPECT_NEAR(*r.miou_all, 0.6571, 1e-4);
    EXPECT_EQ(r.class_names, (std::vector<std::string>{"a", "b"}));

    std::ostringstream csv;
    write_report_csv(r, csv);
    EXPECT_NE(csv.str().find("accuracy_seen,0.750000\n"), std::string::npos);
    EXPECT_NE(csv.str().find("hm_accuracy,0.789474\n"), std::string::npos);
}

TEST(Report, EmptyMatrixIsAnError) {
    try {
        (void)build_report(ConfusionMatrix({1, 2}), two_class_split());
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no evaluation points");
    }
}

TEST(Accumulate, AccuracyAndIouMatchDirectCounting) {
    std::mt19937_64 rng(8);
    const std::vector<ClassId> classes{1, 2, 3, 4, 5};
    std::uniform_int_distribution<int> pick(0, 4);
    for (int t = 0; t < 20; ++t) {
        std::vector<ClassId> truth, pred;
        for (int i = 0; i < 500; ++i) {
            truth.push_back(classes[pick(rng)]);
            pred.push_back(pick(rng) < 2 ? truth.back() : classes[pick(rng)]);
        }
        ConfusionMatrix cm(classes);
        accumulate(cm, truth, pred);
        std::size_t match = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) match += truth[i] == pred[i];
        const auto r = build_report(cm, covered::default_split());
        EXPECT_DOUBLE_EQ(r.overall_accuracy, static_cast<double>(match) / 500.0);

        const auto iou = iou_per_class(cm);
        for (std::size_t k = 0; k < classes.size(); ++k) {
            std::set<std::size_t> t_set, p_set, both, either;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (truth[i] == classes[k]) t_set.insert(i);
                if (pred[i] == classes[k]) p_set.insert(i);
            }
            std::set_intersection(t_set.begin(), t_set.end(), p_set.begin(), p_set.end(),
                                  std::inserter(both, both.begin()));
            std::set_union(t_set.begin(), t_set.end(), p_set.begin(), p_set.end(),
                           std::inserter(either, either.begin()));
            EXPECT_DOUBLE_EQ(*iou[k], static_cast<double>(both.size()) / static_cast<double>(either.size()));
            EXPECT_EQ(cm.row_sum(k), t_set.size());
        }
    }
}

TEST(Accumulate, UnknownLabelAndLengthMismatch) {
    ConfusionMatrix cm({1, 2});
    EXPECT_THROW(accumulate(cm, std::vector<ClassId>{1, 3}, std::vector<ClassId>{1, 1}), Error);
    EXPECT_THROW(accumulate(cm, std::vector<ClassId>{1}, std::vector<ClassId>{1, 1}), Error);
}

TEST(Accumulate, ShardsMergeToSinglePass) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> pick(1, 3);
    std::vector<ClassId> truth, pred;
    for (int i = 0; i < 300; ++i) {
        truth.push_back(pick(rng));
        pred.push_back(pick(rng));
    }
    ConfusionMatrix whole({1, 2, 3}), a({1, 2, 3}), b({1, 2, 3});
    accumulate(whole, truth, pred);
    const std::span<const ClassId> t(truth), p(pred);
    accumulate(a, t.first(120), p.first(120));
    accumulate(b, t.subspan(120), p.subspan(120));
    a += b;
    EXPECT_EQ(a, whole);
    ConfusionMatrix other({1, 2});
    EXPECT_THROW(a += other, Error);
}
