#include "posemine/episodes.hpp"

#include <algorithm>

namespace posemine {

Episode sample_episode(const SyntheticDataset& ds, const std::vector<int>& split, int shots,
                       int target_k, double alpha, EpisodeMode mode, Rng& rng) {
    if (split.empty()) throw ContractError("sample_episode: empty class split");
    if (shots < 1) throw ContractError("sample_episode: shots must be >= 1");
    if (ds.instances_per_class < shots + 1)
        throw ContractError("sample_episode: class has " +
                            std::to_string(ds.instances_per_class) + " instances, needs " +
                            std::to_string(shots + 1));

    Episode ep;
    const int class_index = split[static_cast<std::size_t>(rng.uniform_int(
        0, static_cast<int>(split.size()) - 1))];
    const SyntheticClass& cls = ds.classes[static_cast<std::size_t>(class_index)];
    ep.class_id = cls.class_id;
    ep.raw_count = cls.keypoint_count();

    // shots+1 distinct instance indices; the last drawn is the query.
    std::vector<int> pool(static_cast<std::size_t>(ds.instances_per_class));
    for (int i = 0; i < ds.instances_per_class; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i <= shots; ++i) {
        const int j = rng.uniform_int(i, ds.instances_per_class - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    for (int n = 0; n < shots; ++n)
        ep.supports.push_back(ds.instance(class_index, pool[static_cast<std::size_t>(n)]));
    ep.query = ds.instance(class_index, pool[static_cast<std::size_t>(shots)]);

    const int raw = ep.raw_count;
    if (target_k < raw)
        throw ContractError("sample_episode: target_k " + std::to_string(target_k) +
                            " below class keypoint count " + std::to_string(raw));

    // One record shared by every set in the episode, so support and query agree
    // on every (pair, lambda). Padded supports count as visible; padded query
    // ground truth inherits the min of its source weights.
    if (target_k == raw) {
        ep.padded_links = cls.links;
        for (const Instance& s : ep.supports) ep.padded_supports.push_back(s.keypoints);
        ep.padded_query_gt = ep.query.keypoints;
        return ep;
    }
    if (cls.links.edge_count() == 0) {
        ep.record.no_link_fallback = true;
        ep.padded_links = expand_links(cls.links, target_k);
        for (const Instance& s : ep.supports)
            ep.padded_supports.push_back(zero_pad(s.keypoints, target_k));
        ep.padded_query_gt = zero_pad(ep.query.keypoints, target_k);
        return ep;
    }

    ep.record = mode == EpisodeMode::kTrain
                    ? sample_mixup_record(raw, cls.links, target_k, alpha, rng)
                    : uniform_record(raw, cls.links, target_k);
    for (const Instance& s : ep.supports) {
        PaddedSet padded = apply_record(s.keypoints, cls.links, ep.record, target_k,
                                        PadWeightRule::kOne);
        ep.padded_supports.push_back(std::move(padded.points));
        ep.padded_links = padded.links;
    }
    ep.padded_query_gt = apply_record(ep.query.keypoints, cls.links, ep.record, target_k,
                                      PadWeightRule::kMinSource)
                             .points;
    return ep;
}

}  // namespace posemine
