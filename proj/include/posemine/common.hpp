#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace posemine {

using Vec2 = std::array<double, 2>;

// Thrown when a caller violates a documented precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace posemine
