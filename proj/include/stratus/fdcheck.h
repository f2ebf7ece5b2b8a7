#pragma once

#include <functional>
#include <vector>

#include "stratus/tensor.h"

namespace stratus {

// Central-difference check of tape gradients. `f` maps the parameter list to
// a scalar loss; it is evaluated once under a recording tape for analytic
// gradients and twice per coordinate for the finite differences. Returns the
// max over coordinates of |fd - g| / max(|g|, 1e-8).
double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, double step = 1e-5);

}  // namespace stratus
