#pragma once

#include <functional>

#include "shefu/tensor.hpp"

namespace shefu {

// Central-difference gradient verification. `f` evaluates the scalar loss at a
// point, `analytic` produces the full analytic gradient there (typically via a
// tape backward). Returns the maximum relative error over all coordinates:
//   |analytic - central| / (|analytic| + 1e-8)
template <typename S>
double grad_check(const std::function<double(const TensorT<S>&)>& f,
                  const std::function<TensorT<S>(const TensorT<S>&)>& analytic,
                  const TensorT<S>& point, double h) {
    if (h < 1e-5 || h > 1e-2) throw ContractError("grad_check: h must be in [1e-5, 1e-2]");
    TensorT<S> g = analytic(point);
    if (g.shape != point.shape) throw ContractError("grad_check: gradient shape mismatch");
    double max_rel = 0.0;
    TensorT<S> x = point;
    for (size_t i = 0; i < x.numel(); ++i) {
        S orig = x.data[i];
        x.data[i] = orig + static_cast<S>(h);
        double fp = f(x);
        x.data[i] = orig - static_cast<S>(h);
        double fm = f(x);
        x.data[i] = orig;
        double central = (fp - fm) / (2.0 * h);
        double rel = std::abs(static_cast<double>(g.data[i]) - central) /
                     (std::abs(static_cast<double>(g.data[i])) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace shefu
