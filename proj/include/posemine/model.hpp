#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posemine/backbone.hpp"
#include "posemine/deform_attn.hpp"
#include "posemine/episodes.hpp"
#include "posemine/optim.hpp"
#include "posemine/pose_graph.hpp"

namespace posemine {

// Geometry and training constants. Defaults are the desk-scale configuration;
// paper-scale values stay reachable by overriding fields.
struct ModelConfig {
    int k_total = 16;    // unified keypoint count K
    int heads = 4;       // attention heads M per miner
    int layers = 3;      // recurrent layers L
    int channels = 32;   // feature width D
    int samples = 4;     // sampling points S per head per level
    double alpha = 1.0;  // mixup Beta parameter
    double beta = 0.5;   // padded-loss weight
    double sigma_h = 0.1;  // heatmap pooling stddev (normalized units)
    int image_size = 64;
    std::vector<int> pyramid_strides{4, 8, 16};
    std::vector<int> backbone_widths;  // empty = derived from channels
    bool share_layer_weights = false;

    void validate() const;
};

// One recurrent layer: a support miner, a query miner (never shared with the
// support one), and the refinement head mapping query features to logit-space
// coordinate deltas. The delta head's final layer starts at zero so layer
// outputs begin as the identity refinement.
struct RecurrentLayerParams {
    FgsaMinerParams miner_s;
    FgsaMinerParams miner_q;
    Tensor mlp_w1;  // {D, D}
    Tensor mlp_b1;  // {D}
    Tensor mlp_w2;  // {D, 2}, zero at init
    Tensor mlp_b2;  // {2}, zero at init
};

struct ForwardOptions {
    bool identical_refs = false;  // anchor every head at its own keypoint
    bool capture_debug = false;   // record query-miner attention traces
};

// Full recurrent state: layer l lives at index l-1 of the per-layer vectors.
struct ForwardTrace {
    Tensor f_q0;              // {K, D} pooled initial keypoint features
    Tensor p_q0;              // {K, 2} all 0.5
    std::vector<Tensor> f_s;  // {K, D} mined support features per layer
    std::vector<Tensor> f_q;  // {K, D} mined query features per layer
    std::vector<Tensor> p_q;  // {K, 2} predictions per layer, inside (0,1)
    std::vector<FgsaDebug> debug_q;  // filled when capture_debug is set

    int layer_count() const { return static_cast<int>(p_q.size()); }
    const Tensor& prediction() const { return p_q.back(); }
};

// Keypoint coordinates as a constant {K, 2} tensor.
Tensor keypoints_tensor(const KeypointSet& pts);

struct PoseModel {
    ModelConfig cfg;
    ParamRegistry registry;
    BackboneParams backbone;
    std::vector<RecurrentLayerParams> layers;  // one entry when weights are shared

    static PoseModel build(const ModelConfig& cfg, uint64_t seed);

    const RecurrentLayerParams& layer(int l) const {
        return layers[cfg.share_layer_weights ? 0 : static_cast<std::size_t>(l)];
    }

    FeaturePyramid extract(const Tensor& image) const { return backbone_forward(image, backbone); }

    // One episode pass. Initial features pool from the first support; at every
    // layer the per-support mined features are averaged before query mining;
    // predictions update in logit space.
    ForwardTrace forward(const FeaturePyramid& pyr_q,
                         const std::vector<FeaturePyramid>& support_pyrs,
                         const std::vector<KeypointSet>& support_sets, const LinkMatrix& links,
                         const ForwardOptions& opts = {}) const;

    // Convenience wrapper: extracts pyramids from the episode images first.
    ForwardTrace run_episode(const Episode& ep, const ForwardOptions& opts = {}) const;
};

}  // namespace posemine
