#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "posemine/tensor.hpp"

namespace posemine {

struct GradCheckResult {
    double max_rel = 0.0;   // worst relative error over all checked elements
    std::string worst;      // "leaf[index]" of the worst element
    std::size_t checked = 0;
    bool pass(double tol) const { return checked > 0 && max_rel < tol; }
};

// Central finite-difference check. `loss_fn` rebuilds the graph from the given
// leaves and returns a scalar loss; it must be deterministic. Analytic
// gradients come from one taped backward pass; numeric ones from (f(x+h) -
// f(x-h)) / 2h per element. Relative error uses max(|analytic|, |numeric|,
// denom_floor) as denominator so near-zero gradients do not blow up the ratio.
GradCheckResult fd_gradcheck(const std::function<Tensor()>& loss_fn,
                             const std::vector<std::pair<std::string, Tensor>>& leaves,
                             double h = 1e-5, double denom_floor = 1e-3);

}  // namespace posemine
