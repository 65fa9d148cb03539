#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dsmcd/autograd.hpp"

namespace dsmcd::testutil {

/// Central-difference check of d(loss)/d(target[indices]) against the
/// analytic gradient. `forward` must rebuild the graph from current leaf
/// values and return the scalar loss.
struct GradCheckResult {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline GradCheckResult check_gradient(const std::function<nn::VarPtr()>& forward,
                                      const nn::VarPtr& target,
                                      const std::vector<size_t>& indices, double h,
                                      double abs_floor = 1e-10) {
    nn::VarPtr loss = forward();
    target->zero_grad();
    nn::backward(loss);
    std::vector<double> analytic;
    for (size_t idx : indices) analytic.push_back(target->grad[idx]);

    GradCheckResult r;
    for (size_t k = 0; k < indices.size(); ++k) {
        const size_t idx = indices[k];
        const double keep = target->value[idx];
        target->value[idx] = keep + h;
        const double up = forward()->value[0];
        target->value[idx] = keep - h;
        const double down = forward()->value[0];
        target->value[idx] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
        const double rel = std::abs(analytic[k] - numeric) / denom;
        if (rel > r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_analytic = analytic[k];
            r.worst_numeric = numeric;
        }
    }
    return r;
}

} // namespace dsmcd::testutil
