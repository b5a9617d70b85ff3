#pragma once

#include <string>
#include <vector>

#include "posemine/deform_attn.hpp"
#include "posemine/optim.hpp"
#include "posemine/rng.hpp"
#include "posemine/tensor.hpp"

namespace posemine {

// Small strided convolutional feature extractor. Stage i halves resolution
// (3x3 conv, stride 2, gelu); whenever the cumulative stride matches an entry
// of `strides`, a 1x1 projection emits a pyramid level with `channels`
// channels. Strides must be ascending powers of two, so levels come out
// finest first.
struct BackboneParams {
    std::vector<Tensor> stage_w;  // {3, 3, C_in, C_out} per stage
    std::vector<Tensor> stage_b;
    std::vector<Tensor> tap_w;    // {1, 1, C_stage, D} per pyramid level
    std::vector<Tensor> tap_b;
    std::vector<int> tap_stage;   // stage index each tap reads from
    std::vector<int> strides;
    int channels = 0;

    int stage_count() const { return static_cast<int>(stage_w.size()); }
};

// Stage widths grow 8, 16, 32, ... capped at `channels` unless overridden by
// a non-empty `widths` (one entry per stage, i.e. log2(strides.back())).
BackboneParams make_backbone(ParamRegistry& reg, const std::string& prefix,
                             const std::vector<int>& strides, int channels,
                             const std::vector<int>& widths, Rng& rng);

// image {H, W, 3} with H and W divisible by the coarsest stride.
FeaturePyramid backbone_forward(const Tensor& image, const BackboneParams& p);

}  // namespace posemine
