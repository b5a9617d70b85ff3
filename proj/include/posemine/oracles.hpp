#pragma once

#include <vector>

#include "posemine/deform_attn.hpp"

namespace posemine {

// Plain-double reference implementations, written independently of the tensor
// ops. They enumerate every sampling point / keypoint with naive loops and
// exist only to cross-check the library path in tests and verification.

// Reference bilinear read of map {H,W,D} at normalized (x, y).
std::vector<double> oracle_bilinear(const Tensor& map, double x, double y);

// Reference deformable head: recomputes projections, offsets, softmax and the
// weighted sample sum by direct enumeration. Returns the D/M output vector.
std::vector<double> oracle_att_head(const Tensor& f, const FeaturePyramid& pyr, Vec2 p,
                                    const AttentionHeadParams& hp);

// Reference miner: BFS reference points, per-head oracle attention, residual
// mixing, then the pre-norm feed-forward sublayer, all in flat loops. Returns
// the K*D output row-major.
std::vector<double> oracle_fgsa_mine(const Tensor& F, const FeaturePyramid& pyr, const Tensor& P,
                                     const LinkMatrix& links, const FgsaMinerParams& params,
                                     bool identical_refs = false);

}  // namespace posemine
