#pragma once

#include <cstdint>
#include <vector>

#include "posemine/pose_graph.hpp"
#include "posemine/rng.hpp"
#include "posemine/tensor.hpp"

namespace posemine {

// A procedural pose class: a canonical skeleton template with a connected
// link graph and one appearance signature per keypoint. Signatures index a
// shared palette (16 distinct hues, alternating blob radii) and are permuted
// per class, so a keypoint's identity on a novel class can only be resolved
// through the support image, not by memorizing colors.
struct SyntheticClass {
    int class_id = 0;
    std::vector<Vec2> template_coords;
    LinkMatrix links{0};
    std::vector<int> signature;  // palette index per keypoint

    int keypoint_count() const { return static_cast<int>(template_coords.size()); }
};

// One rendered sample: image plus ground-truth keypoints. Keypoints displaced
// outside [0,1] by the pose transform are clamped and weighted 0.
struct Instance {
    Tensor image;  // {H, W, 3} in [0,1]
    KeypointSet keypoints;
    int class_id = 0;
};

// Global similarity transform about the template centroid: scale, rotate,
// then move the centroid to centroid_to.
struct PoseTransform {
    double scale = 1.0;
    double rotation = 0.0;  // radians
    Vec2 centroid_to{0.5, 0.5};
};

std::vector<Vec2> apply_transform(const std::vector<Vec2>& pts, const PoseTransform& t);

// Palette color (r, g, b) and blob stddev in normalized units for a signature.
struct BlobStyle {
    double r, g, b;
    double sigma;
};
BlobStyle palette_style(int signature);

// Deterministic in seed; connected links (spatial spanning tree plus an
// occasional extra edge); keypoint count uniform in [min_k, max_k].
SyntheticClass generate_class(uint64_t seed, int class_id, int min_k = 5, int max_k = 12);

// Renders with an explicit transform and per-joint Gaussian jitter.
Instance render_with(const SyntheticClass& cls, const PoseTransform& t, double jitter_sigma,
                     Rng& rng, int image_size);

// Random pose: scale 0.6-1.1, rotation within +/-30 degrees, centroid kept
// inside the frame, small per-joint jitter.
Instance render_instance(const SyntheticClass& cls, Rng& rng, int image_size);

// Lazily rendered, fully seeded collection of classes. instance(c, i) always
// returns the same sample for the same dataset seed.
struct SyntheticDataset {
    std::vector<SyntheticClass> classes;
    uint64_t seed = 0;
    int instances_per_class = 0;
    int image_size = 0;

    Instance instance(int class_index, int instance_index) const;
    int max_keypoint_count() const;
};

SyntheticDataset make_dataset(uint64_t seed, int class_count, int instances_per_class,
                              int image_size, int min_k = 5, int max_k = 12);

}  // namespace posemine
