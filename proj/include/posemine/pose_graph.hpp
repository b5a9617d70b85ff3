#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "posemine/common.hpp"
#include "posemine/rng.hpp"

namespace posemine {

// K keypoints in normalized [0,1] image coordinates with visibility weights.
// Indices below raw_count are the class's real keypoints; the rest are
// padding. Weight-0 entries are excluded from every loss and metric.
struct KeypointSet {
    std::vector<Vec2> coords;
    std::vector<double> weight;
    int raw_count = 0;

    int size() const { return static_cast<int>(coords.size()); }
};

// Throws ContractError when coordinates/weights leave [0,1] or raw_count is
// inconsistent with the stored arrays.
void validate_keypoints(const KeypointSet& s);

// Binary symmetric adjacency with zero diagonal.
class LinkMatrix {
  public:
    explicit LinkMatrix(int k) : k_(k), adj_(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0) {}

    int size() const { return k_; }
    bool at(int i, int j) const { return adj_[idx(i, j)] != 0; }
    void set(int i, int j, bool v);
    // Edges as (i, j) with i < j, ascending lexicographic order.
    std::vector<std::pair<int, int>> edges() const;
    int edge_count() const { return static_cast<int>(edges().size()); }
    std::vector<int> neighbors(int i) const;  // ascending

    bool operator==(const LinkMatrix&) const = default;

  private:
    std::size_t idx(int i, int j) const;
    int k_;
    std::vector<uint8_t> adj_;
};

// How one padded keypoint was formed: P[k] = lambda*P[i] + (1-lambda)*P[j],
// where (i, j) was a link of the raw graph. ordinal is the 0-based position
// of this point along the i->j chain (chains order points by descending
// lambda, i.e. nearest-to-i first).
struct PadEntry {
    int i = 0;
    int j = 0;
    double lambda = 0.0;
    int ordinal = 0;
};

// entries[t] describes padded index raw_count + t. A class without any links
// cannot host mixup/uniform points; such sets fall back to zero padding and
// carry the no_link_fallback flag.
struct PaddingRecord {
    std::vector<PadEntry> entries;
    bool no_link_fallback = false;
};

// Weight assigned to padded points: plain padding marks them fully visible;
// query ground truth in training inherits min(weight[i], weight[j]) so a mix
// with an occluded endpoint is not supervised as reliable.
enum class PadWeightRule { kOne, kMinSource };

struct PaddedSet {
    KeypointSet points;
    LinkMatrix links;
};

struct MixupPadResult {
    KeypointSet points;
    LinkMatrix links;
    PaddingRecord record;
};

struct PairPadResult {
    KeypointSet support;
    KeypointSet query;
    LinkMatrix links;
    PaddingRecord record;
};

// Samples target_k - raw_count (pair, lambda) entries: pairs uniform over the
// edge set with replacement, lambda ~ Beta(alpha, alpha); ordinals assigned by
// descending lambda within each pair group (ties: earlier entry first).
PaddingRecord sample_mixup_record(int raw_count, const LinkMatrix& links, int target_k,
                                  double alpha, Rng& rng);

// Deterministic inference-time record: padded slots round-robin over edges in
// ascending lexicographic order; an edge receiving n points gets the equal
// division lambdas n/(n+1), ..., 1/(n+1) in visit order.
PaddingRecord uniform_record(int raw_count, const LinkMatrix& links, int target_k);

// Replays a record onto raw keypoints: padded coordinates from the mixing
// rule, chains i - p_1 - ... - p_n - j rewired into the link matrix with the
// direct (i, j) edge removed. Exact and deterministic, so the same record
// reproduces the same padded set bit for bit.
PaddedSet apply_record(const KeypointSet& raw, const LinkMatrix& links, const PaddingRecord& rec,
                       int target_k, PadWeightRule rule);

// Random mixup padding of a single set (support side). Zero-edge graphs fall
// back to zero padding with the record flagged.
MixupPadResult mixup_pad(const KeypointSet& raw, const LinkMatrix& links, int target_k,
                         double alpha, Rng& rng);

// Training-time paired padding: one sampled record applied to both sets so
// support and query share every (pair, lambda); padded query weights follow
// the min-source rule.
PairPadResult mixup_pad_pair(const KeypointSet& support, const KeypointSet& query_gt,
                             const LinkMatrix& links, int target_k, double alpha, Rng& rng);

// Deterministic equal-division padding for inference.
MixupPadResult uniform_pad(const KeypointSet& raw, const LinkMatrix& links, int target_k);

// Pads with invisible placeholder points at the image center; links are left
// untouched (padded rows empty).
KeypointSet zero_pad(const KeypointSet& raw, int target_k);

// Embeds a smaller adjacency into a target_k-sized one with empty new rows.
LinkMatrix expand_links(const LinkMatrix& links, int target_k);

// Breadth-first traversal from keypoint k with ascending-index tie-breaking.
// Position 0 is k itself; when fewer than m keypoints are reachable the
// sequence cycles from its beginning until length m.
std::vector<int> bfs_reference_indices(const LinkMatrix& links, int k, int m);
std::vector<Vec2> bfs_reference_points(const KeypointSet& pts, const LinkMatrix& links, int k,
                                       int m);

}  // namespace posemine
