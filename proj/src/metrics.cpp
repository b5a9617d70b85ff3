#include "posemine/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace posemine {

namespace {

// Errors measured on the raw (pre-padding) keypoints only.
int raw_size(const KeypointSet& gt) { return gt.raw_count > 0 ? gt.raw_count : gt.size(); }

double keypoint_error(const Vec2& a, const Vec2& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::string threshold_key(double tau) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", tau);
    return buf;
}

}  // namespace

double pck(const std::vector<Vec2>& pred, const KeypointSet& gt, double scale, double tau) {
    if (scale <= 0.0) throw ContractError("pck: scale must be positive");
    const int n = raw_size(gt);
    if (static_cast<int>(pred.size()) < n)
        throw ContractError("pck: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(n) + " keypoints");
    long visible = 0, correct = 0;
    for (int k = 0; k < n; ++k) {
        if (gt.weight[static_cast<std::size_t>(k)] <= 0.0) continue;
        ++visible;
        if (keypoint_error(pred[static_cast<std::size_t>(k)],
                           gt.coords[static_cast<std::size_t>(k)]) <= tau * scale)
            ++correct;
    }
    if (visible == 0) return kPckUndefined;
    return static_cast<double>(correct) / static_cast<double>(visible);
}

void EvalAccumulator::add(int class_id, const std::vector<Vec2>& pred, const KeypointSet& gt,
                          double scale) {
    if (scale <= 0.0) throw ContractError("pck: scale must be positive");
    Counts& c = per_class_[class_id];
    const int n = raw_size(gt);
    if (static_cast<int>(pred.size()) < n)
        throw ContractError("pck: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(n) + " keypoints");
    for (int k = 0; k < n; ++k) {
        if (gt.weight[static_cast<std::size_t>(k)] <= 0.0) continue;
        ++c.visible;
        const double err = keypoint_error(pred[static_cast<std::size_t>(k)],
                                          gt.coords[static_cast<std::size_t>(k)]);
        for (std::size_t t = 0; t < kPckThresholds.size(); ++t)
            if (err <= kPckThresholds[t] * scale) ++c.correct[t];
    }
    ++c.episodes;
    ++episodes_;
}

EvalReport EvalAccumulator::report() const {
    EvalReport rep;
    rep.episodes = episodes_;
    int defined_classes = 0;
    for (const auto& [class_id, counts] : per_class_) {
        ClassScores s;
        s.episodes = counts.episodes;
        if (counts.visible > 0) {
            ++defined_classes;
            for (std::size_t t = 0; t < kPckThresholds.size(); ++t) {
                s.pck_at[t] = static_cast<double>(counts.correct[t]) /
                              static_cast<double>(counts.visible);
                s.mpck += s.pck_at[t] / static_cast<double>(kPckThresholds.size());
                rep.pck_at[t] += s.pck_at[t];
            }
        } else {
            s.pck_at.fill(kPckUndefined);
            s.mpck = kPckUndefined;
        }
        rep.per_class[class_id] = s;
    }
    if (defined_classes > 0) {
        for (double& v : rep.pck_at) v /= static_cast<double>(defined_classes);
        for (double v : rep.pck_at) rep.mpck += v / static_cast<double>(kPckThresholds.size());
    } else {
        rep.pck_at.fill(kPckUndefined);
        rep.mpck = kPckUndefined;
    }
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["episodes"] = episodes;
    j["mpck"] = mpck;
    for (std::size_t t = 0; t < kPckThresholds.size(); ++t)
        j["pck"][threshold_key(kPckThresholds[t])] = pck_at[t];
    for (const auto& [class_id, s] : per_class) {
        nlohmann::json c;
        c["episodes"] = s.episodes;
        c["mpck"] = s.mpck;
        for (std::size_t t = 0; t < kPckThresholds.size(); ++t)
            c["pck"][threshold_key(kPckThresholds[t])] = s.pck_at[t];
        j["per_class"][std::to_string(class_id)] = c;
    }
    return j.dump(2);
}

}  // namespace posemine
