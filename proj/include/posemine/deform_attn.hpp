#pragma once

#include <string>
#include <vector>

#include "posemine/common.hpp"
#include "posemine/optim.hpp"
#include "posemine/pose_graph.hpp"
#include "posemine/rng.hpp"
#include "posemine/tensor.hpp"

namespace posemine {

// Ordered stack of {H, W, D} feature maps, finest first, strictly decreasing
// resolution, shared channel count.
struct FeaturePyramid {
    std::vector<Tensor> levels;

    int channels() const { return levels.empty() ? 0 : levels[0].dim(2); }
    void validate() const;
};

// One deformable attention head: projections read the query feature, sampling
// happens around a reference point on every pyramid level.
struct AttentionHeadParams {
    int s = 4;        // sampling points per level
    int levels = 0;
    Tensor value_w;   // {D, D/M}
    Tensor value_b;   // {D/M}
    Tensor offset_w;  // {D, levels*s*2}, zero at init
    Tensor offset_b;  // {levels*s*2}, deterministic spread (see make_att_head)
    Tensor weight_w;  // {D, levels*s}, zero at init -> uniform attention
    Tensor weight_b;  // {levels*s}
    Tensor out_w;     // {D/M, D}, the per-head mixing matrix applied by the miner
};

// M heads plus the shared pre-norm feed-forward sublayer that follows the
// attention residual.
struct FgsaMinerParams {
    std::vector<AttentionHeadParams> heads;
    Tensor ln_gamma;  // {D}
    Tensor ln_beta;   // {D}
    Tensor ffn_w1;    // {D, ffn_hidden}
    Tensor ffn_b1;    // {ffn_hidden}
    Tensor ffn_w2;    // {ffn_hidden, D}, zero at init -> identity sublayer
    Tensor ffn_b2;    // {D}

    int head_count() const { return static_cast<int>(heads.size()); }
};

// Optional capture of attention internals for visualization and invariants.
struct FgsaDebug {
    struct HeadTrace {
        int keypoint = 0;
        int head = 0;
        int ref_index = 0;               // keypoint index the head anchors on
        Vec2 ref_point{0.5, 0.5};
        std::vector<Vec2> sample_locs;   // levels*s normalized locations
        std::vector<double> weights;     // matching softmax weights
    };
    std::vector<HeadTrace> heads;
    std::vector<std::vector<int>> ref_indices;  // per keypoint: M indices
};

// Bilinear interpolation on one {H, W, D} map at normalized p = (x, y), pixel
// centers at ((u+0.5)/W, (v+0.5)/H). Locations outside the map read zeros.
// Differentiable with respect to map values and p.
Tensor bilinear_sample(const Tensor& map, const Tensor& p /*{2}*/);
Tensor bilinear_sample(const Tensor& map, Vec2 p);

// Row r of locs samples pyramid level level_of_row[r]; output is {n, D}.
// A single fused node on the tape.
Tensor bilinear_sample_multi(const FeaturePyramid& pyr, const Tensor& locs /*{n,2}*/,
                             const std::vector<int>& level_of_row);

// One head's output (D/M vector): predicted offsets around the reference
// point, per-level scaled, softmax-weighted sum of value-projected samples.
// Appends a trace entry when debug is non-null.
Tensor att_head(const Tensor& f /*{D}*/, const FeaturePyramid& pyr, const Tensor& p /*{2}*/,
                const AttentionHeadParams& hp, FgsaDebug::HeadTrace* trace = nullptr);
Tensor att_head(const Tensor& f, const FeaturePyramid& pyr, Vec2 p,
                const AttentionHeadParams& hp, FgsaDebug::HeadTrace* trace = nullptr);

// Structure-aware mining: each keypoint row attends with M heads anchored at
// its BFS-derived reference points, residually mixed through out_w, then a
// pre-norm feed-forward residual sublayer. P carries gradients into the
// sampling locations. identical_refs forces every head onto P[k] itself.
Tensor fgsa_mine(const Tensor& F /*{K,D}*/, const FeaturePyramid& pyr, const Tensor& P /*{K,2}*/,
                 const LinkMatrix& links, const FgsaMinerParams& params,
                 bool identical_refs = false, FgsaDebug* debug = nullptr);

// Gaussian-weighted average of the finest level's features around each
// keypoint (stddev sigma_h in normalized units). Weight-0 keypoints produce
// zero rows. Differentiable with respect to the map.
Tensor heatmap_pool(const FeaturePyramid& pyr, const KeypointSet& pts, double sigma_h);

// Parameter builders; registration names are prefixed so checkpoints stay
// stable. Offset biases spread the s sampling points of head m along direction
// 2*pi*m/M at 1..s pixel radii; value/out projections get small random init;
// offset and weight projections start at zero.
AttentionHeadParams make_att_head(ParamRegistry& reg, const std::string& prefix, int d,
                                  int m_heads, int head_index, int levels, int s, Rng& rng);
FgsaMinerParams make_fgsa_miner(ParamRegistry& reg, const std::string& prefix, int d, int m_heads,
                                int levels, int s, Rng& rng);

}  // namespace posemine
