#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "posemine/model.hpp"
#include "posemine/synthetic.hpp"

namespace posemine {

// Invalid or unparseable run configuration; messages name the offending field.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat, schema-checked run configuration. Unknown keys are rejected; missing
// keys keep the desk-scale defaults below. Every run writes back the fully
// resolved document so ablations stay reproducible from the output directory
// alone.
struct RunConfig {
    uint64_t seed = 7;

    // model geometry
    int k_total = 16;
    int heads = 4;
    int layers = 3;
    int channels = 32;
    int samples = 4;
    double alpha = 1.0;
    double beta = 0.5;
    double sigma_h = 0.1;
    int image_size = 64;
    std::vector<int> pyramid_strides{4, 8, 16};
    std::vector<int> backbone_widths;  // empty = derived
    bool share_layer_weights = false;

    // synthetic data
    int base_classes = 10;
    int novel_classes = 3;
    int instances_per_class = 40;
    int min_keypoints = 5;
    int max_keypoints = 12;

    // optimization / evaluation
    int train_iters = 2000;
    double lr = 1e-3;
    int log_interval = 10;
    int eval_interval = 500;  // 0 disables mid-training evaluation
    int eval_episodes = 20;   // episodes per mid-training evaluation
    int shots = 1;

    std::string out_dir = "runs/default";

    void validate() const;
    ModelConfig model_config() const;
    SyntheticDataset dataset() const;
    std::vector<int> base_split() const;
    std::vector<int> novel_split() const;
    std::string to_json() const;
};

// Parses and validates a config file. Missing file or malformed document or
// failed schema check all raise ConfigError with the path and field.
RunConfig load_run_config(const std::string& path);

// Parses a document from memory (used by load_run_config and tests).
RunConfig parse_run_config(const std::string& text, const std::string& origin);

}  // namespace posemine
