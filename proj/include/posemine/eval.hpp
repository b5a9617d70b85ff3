#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posemine/metrics.hpp"
#include "posemine/model.hpp"

namespace posemine {

// Evaluation-time perturbations. Link flags replace the adjacency fed to the
// miners (padding still follows the true skeleton); padding flags replace the
// test-time padding itself.
enum class AblationFlag {
    kNone,
    kIdenticalRefs,   // every head anchors at its own keypoint
    kAllOnesLinks,    // fully-connected adjacency
    kIdentityLinks,   // no off-diagonal edges: BFS degenerates to self-cycles
    kMixupTestPad,    // training-style random mixup padding at test time
    kZeroTestPad,     // center placeholders with weight 0 at test time
};

AblationFlag ablation_from_string(const std::string& name);
std::string ablation_to_string(AblationFlag flag);
const std::vector<std::string>& ablation_names();

struct EvalOptions {
    int shots = 1;
    int episodes = 200;
    uint64_t seed = 0;
    AblationFlag flag = AblationFlag::kNone;
    // Scores the ground truth as if predicted; pins the metric ceiling at 1.
    bool oracle_predictor = false;
};

// Side-effect-free episodic evaluation over `split` (class indices). Episodes
// are seeded independently of any caller RNG, so two calls with equal options
// return identical reports. Scores cover raw keypoints only, normalized by
// the longest bounding-box side (1.0: synthetic instances fill the frame).
EvalReport evaluate(const PoseModel& model, const SyntheticDataset& ds,
                    const std::vector<int>& split, const EvalOptions& opts);

// Final-layer predictions for the first `count` keypoints.
std::vector<Vec2> predictions_from(const ForwardTrace& trace, int count);

}  // namespace posemine
