#include "posemine/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace posemine {

GradCheckResult fd_gradcheck(const std::function<Tensor()>& loss_fn,
                             const std::vector<std::pair<std::string, Tensor>>& leaves,
                             double h, double denom_floor) {
    std::vector<std::vector<double>> analytic(leaves.size());
    {
        Tape tape;
        for (auto& [name, leaf] : leaves) {
            Tensor t = leaf;  // shallow handle; mutating grad state is fine
            t.set_requires_grad(true);
            t.zero_grad();
        }
        Tensor loss = loss_fn();
        tape.backward(loss);
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            const Tensor& t = leaves[i].second;
            analytic[i] = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
        }
    }

    GradCheckResult res;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        Tensor t = leaves[i].second;
        auto& vals = t.mutable_values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double orig = vals[j];
            vals[j] = orig + h;
            const double up = loss_fn().scalar_value();
            vals[j] = orig - h;
            const double down = loss_fn().scalar_value();
            vals[j] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i][j];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
            const double rel = std::fabs(a - numeric) / denom;
            ++res.checked;
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst = leaves[i].first + "[" + std::to_string(j) + "]";
            }
        }
    }
    return res;
}

}  // namespace posemine
