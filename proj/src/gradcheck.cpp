#include "melweave/gradcheck.hpp"

#include <cmath>
#include <string>

#include "melweave/error.hpp"

namespace melweave {

GradCheckResult grad_check(const ScalarLoss& loss, std::span<const double> params,
                           std::span<const double> analytic, std::span<const std::size_t> coordinates,
                           double epsilon) {
    if (analytic.size() != params.size()) {
        throw Error(ErrorCode::ShapeError, "analytic gradient length differs from parameter count");
    }
    std::vector<double> work(params.begin(), params.end());
    auto evaluate = [&]() {
        const double value = loss(work);
        if (!std::isfinite(value)) {
            throw Error(ErrorCode::NonFiniteLoss, "loss evaluated to " + std::to_string(value));
        }
        return value;
    };
    evaluate();

    GradCheckResult result;
    for (std::size_t index : coordinates) {
        if (index >= params.size()) {
            throw Error(ErrorCode::ShapeError, "coordinate out of range");
        }
        const double original = work[index];
        work[index] = original + epsilon;
        const double plus = evaluate();
        work[index] = original - epsilon;
        const double minus = evaluate();
        work[index] = original;

        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double a = analytic[index];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        ++result.checked;
        if (rel > result.max_relative_error || result.checked == 1) {
            result.max_relative_error = rel;
            result.worst_coordinate = index;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

}  // namespace melweave
