#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "posemine/pose_graph.hpp"

namespace posemine {

inline constexpr std::array<double, 4> kPckThresholds{0.05, 0.1, 0.15, 0.2};

// pck() with no visible keypoints has no defined value.
inline constexpr double kPckUndefined = -1.0;

// Fraction of weight>0 keypoints whose Euclidean error is at most tau * scale;
// scale is the normalization length (longest bounding-box side; 1.0 for whole-
// image synthetic instances). Weight-0 keypoints are excluded entirely.
double pck(const std::vector<Vec2>& pred, const KeypointSet& gt, double scale, double tau);

struct ClassScores {
    std::array<double, 4> pck_at{};
    double mpck = 0.0;
    int episodes = 0;
};

struct EvalReport {
    std::array<double, 4> pck_at{};  // mean over classes at each threshold
    double mpck = 0.0;               // mean of pck_at
    std::map<int, ClassScores> per_class;
    int episodes = 0;

    std::string to_json() const;  // stable key order, no volatile fields
};

// Pools correct/visible counts per class and threshold; report averages the
// per-class PCKs so small classes count as much as large ones.
class EvalAccumulator {
  public:
    void add(int class_id, const std::vector<Vec2>& pred, const KeypointSet& gt, double scale);
    EvalReport report() const;

  private:
    struct Counts {
        std::array<long, 4> correct{};
        long visible = 0;
        int episodes = 0;
    };
    std::map<int, Counts> per_class_;
    int episodes_ = 0;
};

}  // namespace posemine
