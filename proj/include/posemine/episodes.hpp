#pragma once

#include <cstdint>
#include <vector>

#include "posemine/pose_graph.hpp"
#include "posemine/synthetic.hpp"

namespace posemine {

// Training episodes pad supports and query ground truth with one shared mixup
// record; evaluation episodes use the deterministic equal-division padding.
enum class EpisodeMode { kTrain, kEval };

struct Episode {
    Instance query;
    std::vector<Instance> supports;           // same class, never the query
    std::vector<KeypointSet> padded_supports; // one per support, size K
    KeypointSet padded_query_gt;              // size K, min-source weights on pads
    LinkMatrix padded_links{0};               // chains rewired per the record
    PaddingRecord record;
    int class_id = 0;
    int raw_count = 0;
};

// Draws one episode: a class uniform over the split, then shots+1 distinct
// instances (the last is the query). All padding derives from the class link
// graph; a zero-edge graph falls back to zero padding (flagged in record).
Episode sample_episode(const SyntheticDataset& ds, const std::vector<int>& split, int shots,
                       int target_k, double alpha, EpisodeMode mode, Rng& rng);

}  // namespace posemine
