#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "rra/graph.hpp"

namespace rra {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t elements_checked = 0;
    std::string worst; // "<param>[i] analytic=a numeric=b"

    bool pass(double tol) const { return max_rel_err <= tol; }
};

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Central-difference check of reverse-mode gradients. `build` must
/// reconstruct the scalar graph from the current leaf values; it is re-run
/// with each parameter element nudged by +/-step. Double precision only.
template <class S>
GradCheckReport grad_check(const std::function<NodePtr<S>()>& build, const std::vector<NodePtr<S>>& params,
                           double step = 1e-5) {
    static_assert(std::is_same_v<S, double>, "grad_check requires 64-bit tensors");

    for (const auto& p : params) p->zero_grad();
    auto root = build();
    backward(root);

    std::vector<Tensor<S>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad());

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi]->value;
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const S saved = value[i];
            value[i] = saved + static_cast<S>(step);
            const S up = build()->value.item();
            value[i] = saved - static_cast<S>(step);
            const S down = build()->value.item();
            value[i] = saved;
            const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * step);
            const double exact = static_cast<double>(analytic[pi][i]);
            const double err = relative_error(exact, numeric);
            ++report.elements_checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                const std::string label = params[pi]->name.empty() ? ("param" + std::to_string(pi))
                                                                   : params[pi]->name;
                report.worst = label + "[" + std::to_string(i) + "] analytic=" + std::to_string(exact) +
                               " numeric=" + std::to_string(numeric);
            }
        }
    }
    return report;
}

} // namespace rra
