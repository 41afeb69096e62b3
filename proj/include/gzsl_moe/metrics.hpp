#pragma once

// Segmentation metrics from a confusion matrix: accuracy, per-class recall,
// IoU, mIoU over seen / unseen / all, and harmonic means.

#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "prototypes.hpp"

namespace gzsl {

/// Rows are ground truth, columns predictions, both in `classes` order.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::vector<ClassId> classes)
        : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

    [[nodiscard]] std::size_t num_classes() const noexcept { return classes_.size(); }
    [[nodiscard]] const std::vector<ClassId>& classes() const noexcept { return classes_; }
    [[nodiscard]] std::uint64_t operator()(std::size_t truth, std::size_t pred) const {
        return counts_[truth * classes_.size() + pred];
    }

    [[nodiscard]] std::size_t index_of(ClassId c) const {
        for (std::size_t i = 0; i < classes_.size(); ++i)
            if (classes_[i] == c) return i;
        throw Error(ErrorKind::invalid_argument, "confusion matrix: label " + std::to_string(c) + " out of range");
    }

    void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) {
        require(truth < classes_.size() && pred < classes_.size(), "confusion matrix: index out of range");
        counts_[truth * classes_.size() + pred] += n;
    }

    [[nodiscard]] std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }
    [[nodiscard]] std::uint64_t row_sum(std::size_t r) const {
        std::uint64_t t = 0;
        for (std::size_t c = 0; c < classes_.size(); ++c) t += (*this)(r, c);
        return t;
    }
    [[nodiscard]] std::uint64_t col_sum(std::size_t c) const {
        std::uint64_t t = 0;
        for (std::size_t r = 0; r < classes_.size(); ++r) t += (*this)(r, c);
        return t;
    }

    /// Elementwise sum; shards of an evaluation merge in any order.
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        require(classes_ == o.classes_, "confusion matrix: merging matrices with different class sets");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
        return *this;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::vector<ClassId> classes_;
    std::vector<std::uint64_t> counts_;
};

/// cm[truth][pred] += 1 for each pair; labels are class ids.
inline void accumulate(ConfusionMatrix& cm, std::span<const ClassId> truths, std::span<const ClassId> predictions) {
    require(truths.size() == predictions.size(), "accumulate: truth and prediction lengths differ");
    for (std::size_t i = 0; i < truths.size(); ++i) cm.add(cm.index_of(truths[i]), cm.index_of(predictions[i]));
}

/// Per-class value or nullopt when undefined.
using MaybeValue = std::optional<double>;

inline std::vector<MaybeValue> iou_per_class(const ConfusionMatrix& cm) {
    std::vector<MaybeValue> out;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const auto tp = cm(c, c);
        const auto fn = cm.row_sum(c) - tp;
        const auto fp = cm.col_sum(c) - tp;
        const auto denom = tp + fp + fn;
        out.push_back(denom == 0 ? MaybeValue{} : MaybeValue{static_cast<double>(tp) / static_cast<double>(denom)});
    }
    return out;
}

/// Recall per class; undefined on classes absent from the ground truth.
inline std::vector<MaybeValue> recall_per_class(const ConfusionMatrix& cm) {
    std::vector<MaybeValue> out;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const auto row = cm.row_sum(c);
        out.push_back(row == 0 ? MaybeValue{} : MaybeValue{static_cast<double>(cm(c, c)) / static_cast<double>(row)});
    }
    return out;
}

/// Unweighted mean of the defined entries whose class passes `keep`.
template <class Keep>
MaybeValue mean_defined(const ConfusionMatrix& cm, const std::vector<MaybeValue>& values, Keep&& keep) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < values.size(); ++c)
        if (values[c] && keep(cm.classes()[c])) {
            s += *values[c];
            ++n;
        }
    return n == 0 ? MaybeValue{} : MaybeValue{s / static_cast<double>(n)};
}

struct SubsetMeans {
    MaybeValue seen;
    MaybeValue unseen;
    MaybeValue all;
};

inline SubsetMeans subset_means(const ConfusionMatrix& cm, const std::vector<MaybeValue>& values,
                                const SplitConfig& split) {
    for (ClassId c : cm.classes())
        require(split.is_seen(c) || split.is_unseen(c),
                "split does not cover class " + std::to_string(c), ErrorKind::config);
    return {mean_defined(cm, values, [&](ClassId c) { return split.is_seen(c); }),
            mean_defined(cm, values, [&](ClassId c) { return split.is_unseen(c); }),
            mean_defined(cm, values, [](ClassId) { return true; })};
}

inline SubsetMeans miou_subsets(const ConfusionMatrix& cm, const SplitConfig& split) {
    return subset_means(cm, iou_per_class(cm), split);
}

/// 2ab/(a+b); 0 when a+b = 0.
inline double harmonic_mean(double a, double b) {
    require(a >= 0.0 && b >= 0.0, "harmonic_mean: inputs must be nonnegative");
    if (a + b == 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

inline MaybeValue harmonic_mean(MaybeValue a, MaybeValue b) {
    if (!a || !b) return {};
    return harmonic_mean(*a, *b);
}

struct MetricsReport {
    std::vector<ClassId> classes;
    std::vector<std::string> class_names;
    std::uint64_t total = 0;
    double overall_accuracy = 0.0;
    std::vector<MaybeValue> class_accuracy;  // recall
    std::vector<MaybeValue> class_iou;
    MaybeValue acc_seen, acc_unseen;
    MaybeValue miou_seen, miou_unseen, miou_all;
    MaybeValue hm_accuracy, hm_miou;
};

inline MetricsReport build_report(const ConfusionMatrix& cm, const SplitConfig& split,
                                  const std::map<ClassId, std::string>& names = {}) {
    const auto total = cm.total();
    require(total > 0, "no evaluation points");
    MetricsReport r;
    r.classes = cm.classes();
    for (ClassId c : r.classes) {
        auto it = names.find(c);
        r.class_names.push_back(it == names.end() ? "class" + std::to_string(c) : it->second);
    }
    r.total = total;
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) trace += cm(c, c);
    r.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
    r.class_accuracy = recall_per_class(cm);
    r.class_iou = iou_per_class(cm);
    const auto acc = subset_means(cm, r.class_accuracy, split);
    const auto iou = subset_means(cm, r.class_iou, split);
    r.acc_seen = acc.seen;
    r.acc_unseen = acc.unseen;
    r.miou_seen = iou.seen;
    r.miou_unseen = iou.unseen;
    r.miou_all = iou.all;
    r.hm_accuracy = harmonic_mean(r.acc_seen, r.acc_unseen);
    r.hm_miou = harmonic_mean(r.miou_seen, r.miou_unseen);
    return r;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {
inline std::string fmt_metric(const MaybeValue& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}
}  // namespace detail

/// `metric,value` rows.
inline void write_report_csv(const MetricsReport& r, std::ostream& out) {
    out << "metric,value\n";
    out << "points," << r.total << '\n';
    out << "overall_accuracy," << detail::fmt_metric(r.overall_accuracy) << '\n';
    for (std::size_t i = 0; i < r.classes.size(); ++i)
        out << "accuracy_" << r.class_names[i] << ',' << detail::fmt_metric(r.class_accuracy[i]) << '\n';
    for (std::size_t i = 0; i < r.classes.size(); ++i)
        out << "iou_" << r.class_names[i] << ',' << detail::fmt_metric(r.class_iou[i]) << '\n';
    out << "accuracy_seen," << detail::fmt_metric(r.acc_seen) << '\n';
    out << "accuracy_unseen," << detail::fmt_metric(r.acc_unseen) << '\n';
    out << "hm_accuracy," << detail::fmt_metric(r.hm_accuracy) << '\n';
    out << "miou_seen," << detail::fmt_metric(r.miou_seen) << '\n';
    out << "miou_unseen," << detail::fmt_metric(r.miou_unseen) << '\n';
    out << "miou_all," << detail::fmt_metric(r.miou_all) << '\n';
    out << "hm_miou," << detail::fmt_metric(r.hm_miou) << '\n';
}

inline void write_report_text(const MetricsReport& r, std::ostream& out) {
    char line[160];
    out << "GZSL evaluation over " << r.total << " points\n\n";
    std::snprintf(line, sizeof line, "%-10s %8s %10s %10s\n", "class", "id", "accuracy", "IoU");
    out << line;
    for (std::size_t i = 0; i < r.classes.size(); ++i) {
        std::snprintf(line, sizeof line, "%-10s %8d %10s %10s\n", r.class_names[i].c_str(), r.classes[i],
                      detail::fmt_metric(r.class_accuracy[i]).c_str(), detail::fmt_metric(r.class_iou[i]).c_str());
        out << line;
    }
    out << "\noverall accuracy   " << detail::fmt_metric(r.overall_accuracy) << '\n';
    out << "accuracy seen      " << detail::fmt_metric(r.acc_seen) << '\n';
    out << "accuracy unseen    " << detail::fmt_metric(r.acc_unseen) << '\n';
    out << "HM accuracy        " << detail::fmt_metric(r.hm_accuracy) << '\n';
    out << "mIoU seen          " << detail::fmt_metric(r.miou_seen) << '\n';
    out << "mIoU unseen        " << detail::fmt_metric(r.miou_unseen) << '\n';
    out << "mIoU all           " << detail::fmt_metric(r.miou_all) << '\n';
    out << "HM mIoU            " << detail::fmt_metric(r.hm_miou) << '\n';
    out << "\nClasses absent from both truth and prediction are undefined and excluded from means.\n";
}

/// Header row of class names, then one row per ground-truth class.
inline void write_confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names, std::ostream& out) {
    out << "truth\\pred";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (std::size_t r = 0; r < cm.num_classes(); ++r) {
        out << names[r];
        for (std::size_t c = 0; c < cm.num_classes(); ++c) out << ',' << cm(r, c);
        out << '\n';
    }
}

}  // namespace gzsl
