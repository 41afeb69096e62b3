#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "numerics.hpp"

namespace gzsl {

/// One block of coordinates to perturb: live values plus the analytic gradient to compare against.
struct GradProbe {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradCheckReport {
    bool passed = true;
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst;  // "<probe>[<index>]" of the largest error
    double tolerance = 0.0;
};

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Central finite differences on every probed coordinate; the loss must be a
/// pure function of the probed values. Error metric |a-n| / max(1,|a|,|n|).
inline GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradProbe>& probes,
                                  double tolerance, double step = kFiniteDifferenceStep) {
    GradCheckReport r;
    r.tolerance = tolerance;
    for (const auto& p : probes) {
        require(p.values.size() == p.analytic.size(), "grad_check: probe '" + p.name + "' size mismatch");
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double orig = p.values[i];
            p.values[i] = orig + step;
            const double up = loss();
            p.values[i] = orig - step;
            const double down = loss();
            p.values[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = p.analytic[i];
            const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++r.coordinates;
            if (!(rel <= r.max_rel_error)) {
                r.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
                r.worst = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    r.passed = r.max_rel_error < tolerance;
    return r;
}

}  // namespace gzsl
