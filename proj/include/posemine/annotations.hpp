#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "posemine/pose_graph.hpp"

namespace posemine {

// Malformed annotation document; the message carries the byte offset reported
// by the parser.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AnnotationCategory {
    int id = 0;
    std::string name;
    std::vector<std::string> keypoint_names;
    LinkMatrix links{0};  // skeleton pairs, shifted to 0-indexed
};

struct AnnotationInstance {
    int category_id = 0;
    int image_id = 0;
    KeypointSet keypoints;  // box-relative normalized coordinates
};

struct AnnotationSet {
    std::vector<AnnotationCategory> categories;
    std::vector<AnnotationInstance> instances;
    int clamp_warnings = 0;  // keypoints found outside their bounding box

    const AnnotationCategory& category(int id) const;
};

// Reads a keypoint-annotation document: top-level "categories" (id, name,
// keypoints, skeleton with 1-indexed pairs) and "annotations" (image_id,
// category_id, bbox [x, y, w, h], keypoints as flat x/y/visibility triplets).
// Coordinates are normalized relative to the bounding box; visibility 0 maps
// to weight 0; out-of-box keypoints are clamped, weighted 0, and counted.
AnnotationSet load_annotations(const std::string& path);

// Inverse of load_annotations for synthetic fixtures: writes each instance
// against the given bounding box so a reload reproduces the normalized
// coordinates. Visibility is 2 for weight > 0 and 0 otherwise.
void export_annotations(const AnnotationSet& set, const std::string& path,
                        const std::array<double, 4>& bbox = {0.0, 0.0, 1.0, 1.0});

}  // namespace posemine
