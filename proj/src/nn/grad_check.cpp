#include "shapeformer/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "shapeformer/errors.hpp"

namespace shapeformer::nn {

GradCheckResult grad_check(const std::function<Tensor()>& scalar_fn, std::span<Tensor> params,
                           const GradCheckOptions& options) {
    if (options.stencil != 2 && options.stencil != 4) throw ShapeError("grad_check stencil must be 2 or 4");
    FreezeScope scope(FreezeScope::Mode::Record);
    for (auto& p : params) p.zero_grad();
    const Tensor loss = scalar_fn();
    if (!std::isfinite(loss.item())) throw NonFiniteGradient("loss is not finite at the base point");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
    }

    auto evaluate = [&] {
        scope.set_mode(FreezeScope::Mode::Replay);
        NoGradGuard no_grad;
        return scalar_fn().item();
    };

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].mutable_values();
        const std::size_t n = values.size();
        const std::size_t step =
            options.max_per_tensor == 0 ? 1 : std::max<std::size_t>(1, n / options.max_per_tensor);
        for (std::size_t i = 0; i < n; i += step) {
            const double saved = values[i];
            auto at = [&](double offset) {
                values[i] = saved + offset;
                const double f = evaluate();
                values[i] = saved;
                return f;
            };
            const double h = options.epsilon;
            const double numeric = options.stencil == 4
                                       ? (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h)
                                       : (at(h) - at(-h)) / (2 * h);
            const double a = analytic[pi][i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NonFiniteGradient("non-finite gradient entry in tensor " + std::to_string(pi));
            }
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = pi;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    result.passed = result.max_rel_error <= options.tolerance;
    return result;
}

} // namespace shapeformer::nn
