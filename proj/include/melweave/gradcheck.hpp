#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace melweave {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

using ScalarLoss = std::function<double(std::span<const double> params)>;

// Central differences (f(x + eps) - f(x - eps)) / (2 eps) at each listed
// coordinate, compared with `analytic`. Relative error is
// |a - n| / max(|a|, |n|, 1e-8). Throws NonFiniteLoss if any evaluation is
// not finite.
GradCheckResult grad_check(const ScalarLoss& loss, std::span<const double> params,
                           std::span<const double> analytic, std::span<const std::size_t> coordinates,
                           double epsilon = 1e-4);

}  // namespace melweave
