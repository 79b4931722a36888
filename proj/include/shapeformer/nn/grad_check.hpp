#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "shapeformer/nn/tensor.hpp"

namespace shapeformer::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = true;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-3;
    // Cap on checked entries per tensor (evenly strided); 0 checks all.
    std::size_t max_per_tensor = 0;
    // 2: (f(x+h) - f(x-h)) / 2h. 4: fourth-order central stencil
    // (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h.
    int stencil = 2;
};

// Central finite differences against the tape's analytic gradients.
// Relative error per entry is |a - f| / max(|a|, |f|, 1e-8). The function is
// evaluated once under a recording FreezeScope and then replayed, so
// stop-gradient values and discrete choices stay fixed while perturbing.
// Throws NonFiniteGradient if either gradient is NaN/Inf.
GradCheckResult grad_check(const std::function<Tensor()>& scalar_fn, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

} // namespace shapeformer::nn
