#pragma once

#include <vector>

#include "posemine/model.hpp"

namespace posemine {

// full = raw + beta * mixup. All three stay on the tape, so backward through
// `full` reaches every parameter; the per-layer doubles are detached readouts
// for logging.
struct LossBreakdown {
    Tensor raw;
    Tensor mixup;
    Tensor full;
    std::vector<double> per_layer_raw;
    std::vector<double> per_layer_mixup;
};

// Weighted L1 between each layer's prediction and the ground truth over raw
// keypoint rows (k < raw_count), summed over keypoints and averaged over
// layers. gt must be padded to the prediction size.
Tensor loss_raw(const ForwardTrace& trace, const KeypointSet& gt);

// Same, over the padded rows (raw_count <= k < K).
Tensor loss_mixup(const ForwardTrace& trace, const KeypointSet& gt);

LossBreakdown loss_full(const ForwardTrace& trace, const KeypointSet& gt, double beta);

}  // namespace posemine
