#pragma once

#include <string>

#include "posemine/episodes.hpp"
#include "posemine/model.hpp"

namespace posemine {

// Static SVG 1.1 renderers. All output is a pure function of the inputs
// (fixed-precision coordinates, no timestamps), so repeated calls emit
// byte-identical documents.

// Raw keypoints (class "kp"), padded points (class "pad"), and the padded
// link graph of the episode's first support. Chain rewiring from mixup
// padding is visible as the padded points sitting on former direct edges.
std::string render_padding_svg(const Episode& ep);

// Reference-point crosses (class "refcross") and sampling points whose
// fill-opacity equals the softmax attention weight, for every keypoint and
// head of the query miner at `layer`. A <metadata> block lists the per-head
// weight sums (each 1 up to rounding).
std::string render_attention_svg(const PoseModel& model, const Episode& ep, int layer);

// Final-layer predictions (class "pred") against ground truth (class "gt")
// with deviation lines, raw keypoints only.
std::string render_prediction_svg(const PoseModel& model, const Episode& ep);

}  // namespace posemine
