#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "posemine/config.hpp"
#include "posemine/eval.hpp"
#include "posemine/model.hpp"

namespace posemine {

// Raised when the loss stops being finite; carries the episode seed so the
// failing episode can be replayed exactly.
struct TrainAbort : std::runtime_error {
    TrainAbort(int iteration_, uint64_t episode_seed_)
        : std::runtime_error("training aborted: non-finite loss at iteration " +
                             std::to_string(iteration_) + ", episode seed " +
                             std::to_string(episode_seed_)),
          iteration(iteration_),
          episode_seed(episode_seed_) {}
    int iteration;
    uint64_t episode_seed;
};

struct TrainResult {
    PoseModel model;                // trained parameters (shared handles)
    std::vector<double> losses;     // loss_full per iteration
    std::string checkpoint_path;
    std::string metrics_path;
    std::string config_path;
    std::string manifest_path;
};

// Episodic training on the base split: sample -> forward -> L1 losses ->
// backward -> Adam. Writes metrics.jsonl (loss records each log_interval,
// novel-split reports each eval_interval), checkpoint.bin, the resolved
// config, and the split manifest into out_dir. Everything logged is a pure
// function of the config, so equal seeds give byte-identical logs.
TrainResult train_run(const RunConfig& cfg, const std::string& out_dir);

}  // namespace posemine
