#include "posemine/pose_graph.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <string>

namespace posemine {

void validate_keypoints(const KeypointSet& s) {
    if (s.coords.size() != s.weight.size())
        throw ContractError("KeypointSet: " + std::to_string(s.coords.size()) + " coords vs " +
                            std::to_string(s.weight.size()) + " weights");
    if (s.raw_count < 0 || s.raw_count > s.size())
        throw ContractError("KeypointSet: raw_count " + std::to_string(s.raw_count) +
                            " outside [0, " + std::to_string(s.size()) + "]");
    for (const Vec2& p : s.coords)
        if (!(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0))
            throw ContractError("KeypointSet: coordinate outside [0,1]");
    for (double w : s.weight)
        if (!(w >= 0.0 && w <= 1.0)) throw ContractError("KeypointSet: weight outside [0,1]");
}

std::size_t LinkMatrix::idx(int i, int j) const {
    if (i < 0 || i >= k_ || j < 0 || j >= k_)
        throw ContractError("LinkMatrix: index (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside " + std::to_string(k_) + " keypoints");
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(j);
}

void LinkMatrix::set(int i, int j, bool v) {
    if (i == j) throw ContractError("LinkMatrix: self link at " + std::to_string(i));
    adj_[idx(i, j)] = adj_[idx(j, i)] = v ? 1 : 0;
}

std::vector<std::pair<int, int>> LinkMatrix::edges() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < k_; ++i)
        for (int j = i + 1; j < k_; ++j)
            if (at(i, j)) out.emplace_back(i, j);
    return out;
}

std::vector<int> LinkMatrix::neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < k_; ++j)
        if (j != i && at(i, j)) out.push_back(j);
    return out;
}

// ---- records -----------------------------------------------------------------

namespace {

void check_pad_target(int raw_count, int target_k) {
    if (target_k < raw_count)
        throw ContractError("padding: target " + std::to_string(target_k) + " below raw count " +
                            std::to_string(raw_count));
}

// Chain positions within each (i, j) group: descending lambda, ties broken by
// entry order. Writes the 0-based position back into each entry.
void assign_ordinals(PaddingRecord& rec) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t t = 0; t < rec.entries.size(); ++t)
        groups[{rec.entries[t].i, rec.entries[t].j}].push_back(t);
    for (auto& [pair, members] : groups) {
        std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return rec.entries[a].lambda > rec.entries[b].lambda;
        });
        for (std::size_t pos = 0; pos < members.size(); ++pos)
            rec.entries[members[pos]].ordinal = static_cast<int>(pos);
    }
}

}  // namespace

PaddingRecord sample_mixup_record(int raw_count, const LinkMatrix& links, int target_k,
                                  double alpha, Rng& rng) {
    check_pad_target(raw_count, target_k);
    if (alpha <= 0.0) throw ContractError("sample_mixup_record: alpha must be positive");
    const auto edge_list = links.edges();
    if (edge_list.empty()) throw ContractError("sample_mixup_record: graph has no links");
    PaddingRecord rec;
    for (int t = 0; t < target_k - raw_count; ++t) {
        const auto [i, j] = edge_list[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(edge_list.size()) - 1))];
        PadEntry e;
        e.i = i;
        e.j = j;
        e.lambda = rng.beta(alpha, alpha);
        rec.entries.push_back(e);
    }
    assign_ordinals(rec);
    return rec;
}

PaddingRecord uniform_record(int raw_count, const LinkMatrix& links, int target_k) {
    check_pad_target(raw_count, target_k);
    const auto edge_list = links.edges();
    if (edge_list.empty()) throw ContractError("uniform_record: graph has no links");
    const int n_pad = target_k - raw_count;
    // Round-robin slot counts, then equal-division lambdas per edge in visit
    // order (first visit takes the largest lambda).
    std::vector<int> count(edge_list.size(), 0);
    for (int t = 0; t < n_pad; ++t) ++count[static_cast<std::size_t>(t) % edge_list.size()];
    std::vector<int> seen(edge_list.size(), 0);
    PaddingRecord rec;
    for (int t = 0; t < n_pad; ++t) {
        const std::size_t ei = static_cast<std::size_t>(t) % edge_list.size();
        const int n = count[ei];
        PadEntry e;
        e.i = edge_list[ei].first;
        e.j = edge_list[ei].second;
        e.lambda = static_cast<double>(n - seen[ei]) / static_cast<double>(n + 1);
        e.ordinal = seen[ei];
        ++seen[ei];
        rec.entries.push_back(e);
    }
    return rec;
}

PaddedSet apply_record(const KeypointSet& raw, const LinkMatrix& links, const PaddingRecord& rec,
                       int target_k, PadWeightRule rule) {
    check_pad_target(raw.size(), target_k);
    const int kc = raw.size();
    if (links.size() != kc)
        throw ContractError("apply_record: " + std::to_string(kc) + " keypoints vs " +
                            std::to_string(links.size()) + "-sized links");

    if (rec.no_link_fallback) {
        PaddedSet out{zero_pad(raw, target_k), expand_links(links, target_k)};
        return out;
    }
    if (static_cast<int>(rec.entries.size()) != target_k - kc)
        throw ContractError("apply_record: record has " + std::to_string(rec.entries.size()) +
                            " entries, padding needs " + std::to_string(target_k - kc));

    PaddedSet out{raw, expand_links(links, target_k)};
    out.points.raw_count = kc;
    for (std::size_t t = 0; t < rec.entries.size(); ++t) {
        const PadEntry& e = rec.entries[t];
        if (e.i < 0 || e.i >= kc || e.j < 0 || e.j >= kc || !links.at(e.i, e.j))
            throw ContractError("apply_record: entry " + std::to_string(t) +
                                " references a non-link pair");
        const Vec2 pi = raw.coords[static_cast<std::size_t>(e.i)];
        const Vec2 pj = raw.coords[static_cast<std::size_t>(e.j)];
        out.points.coords.push_back({e.lambda * pi[0] + (1.0 - e.lambda) * pj[0],
                                     e.lambda * pi[1] + (1.0 - e.lambda) * pj[1]});
        const double w = rule == PadWeightRule::kOne
                             ? 1.0
                             : std::min(raw.weight[static_cast<std::size_t>(e.i)],
                                        raw.weight[static_cast<std::size_t>(e.j)]);
        out.points.weight.push_back(w);
    }

    // Rewire each populated chain: i - p_(ord 0) - ... - p_(ord n-1) - j,
    // dropping the direct edge.
    std::map<std::pair<int, int>, std::vector<int>> chain;  // ordinal -> padded index
    for (std::size_t t = 0; t < rec.entries.size(); ++t) {
        const PadEntry& e = rec.entries[t];
        auto& members = chain[{e.i, e.j}];
        if (static_cast<std::size_t>(e.ordinal) >= members.size())
            members.resize(static_cast<std::size_t>(e.ordinal) + 1, -1);
        if (members[static_cast<std::size_t>(e.ordinal)] != -1)
            throw ContractError("apply_record: duplicate ordinal in one chain");
        members[static_cast<std::size_t>(e.ordinal)] = kc + static_cast<int>(t);
    }
    for (const auto& [pair, members] : chain) {
        for (int m : members)
            if (m == -1) throw ContractError("apply_record: chain ordinals not contiguous");
        out.links.set(pair.first, pair.second, false);
        int prev = pair.first;
        for (int m : members) {
            out.links.set(prev, m, true);
            prev = m;
        }
        out.links.set(prev, pair.second, true);
    }
    return out;
}

MixupPadResult mixup_pad(const KeypointSet& raw, const LinkMatrix& links, int target_k,
                         double alpha, Rng& rng) {
    check_pad_target(raw.size(), target_k);
    if (target_k == raw.size()) {
        KeypointSet pts = raw;
        pts.raw_count = raw.size();
        return {std::move(pts), links, PaddingRecord{}};
    }
    if (links.edge_count() == 0) {
        PaddingRecord rec;
        rec.no_link_fallback = true;
        return {zero_pad(raw, target_k), expand_links(links, target_k), std::move(rec)};
    }
    PaddingRecord rec = sample_mixup_record(raw.size(), links, target_k, alpha, rng);
    PaddedSet padded = apply_record(raw, links, rec, target_k, PadWeightRule::kOne);
    return {std::move(padded.points), std::move(padded.links), std::move(rec)};
}

PairPadResult mixup_pad_pair(const KeypointSet& support, const KeypointSet& query_gt,
                             const LinkMatrix& links, int target_k, double alpha, Rng& rng) {
    if (support.size() != query_gt.size())
        throw ContractError("mixup_pad_pair: support has " + std::to_string(support.size()) +
                            " keypoints, query has " + std::to_string(query_gt.size()));
    MixupPadResult sup = mixup_pad(support, links, target_k, alpha, rng);
    if (sup.record.no_link_fallback || target_k == support.size()) {
        KeypointSet q = sup.record.no_link_fallback ? zero_pad(query_gt, target_k) : query_gt;
        q.raw_count = query_gt.size();
        return {std::move(sup.points), std::move(q), std::move(sup.links), std::move(sup.record)};
    }
    PaddedSet q = apply_record(query_gt, links, sup.record, target_k, PadWeightRule::kMinSource);
    return {std::move(sup.points), std::move(q.points), std::move(sup.links),
            std::move(sup.record)};
}

MixupPadResult uniform_pad(const KeypointSet& raw, const LinkMatrix& links, int target_k) {
    check_pad_target(raw.size(), target_k);
    if (target_k == raw.size()) {
        KeypointSet pts = raw;
        pts.raw_count = raw.size();
        return {std::move(pts), links, PaddingRecord{}};
    }
    if (links.edge_count() == 0) {
        PaddingRecord rec;
        rec.no_link_fallback = true;
        return {zero_pad(raw, target_k), expand_links(links, target_k), std::move(rec)};
    }
    PaddingRecord rec = uniform_record(raw.size(), links, target_k);
    PaddedSet padded = apply_record(raw, links, rec, target_k, PadWeightRule::kOne);
    return {std::move(padded.points), std::move(padded.links), std::move(rec)};
}

KeypointSet zero_pad(const KeypointSet& raw, int target_k) {
    check_pad_target(raw.size(), target_k);
    KeypointSet out = raw;
    out.raw_count = raw.size();
    out.coords.resize(static_cast<std::size_t>(target_k), Vec2{0.5, 0.5});
    out.weight.resize(static_cast<std::size_t>(target_k), 0.0);
    return out;
}

LinkMatrix expand_links(const LinkMatrix& links, int target_k) {
    if (target_k < links.size()) throw ContractError("expand_links: target below current size");
    LinkMatrix out(target_k);
    for (const auto& [i, j] : links.edges()) out.set(i, j, true);
    return out;
}

std::vector<int> bfs_reference_indices(const LinkMatrix& links, int k, int m) {
    if (k < 0 || k >= links.size())
        throw ContractError("bfs_reference_indices: start " + std::to_string(k) + " outside " +
                            std::to_string(links.size()) + " keypoints");
    if (m < 1) throw ContractError("bfs_reference_indices: m must be >= 1");
    std::vector<char> visited(static_cast<std::size_t>(links.size()), 0);
    std::vector<int> order;
    std::deque<int> queue{k};
    visited[static_cast<std::size_t>(k)] = 1;
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        order.push_back(cur);
        for (int nb : links.neighbors(cur)) {  // ascending-index tie-break
            if (!visited[static_cast<std::size_t>(nb)]) {
                visited[static_cast<std::size_t>(nb)] = 1;
                queue.push_back(nb);
            }
        }
    }
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t) out.push_back(order[static_cast<std::size_t>(t) % order.size()]);
    return out;
}

std::vector<Vec2> bfs_reference_points(const KeypointSet& pts, const LinkMatrix& links, int k,
                                       int m) {
    if (pts.size() != links.size())
        throw ContractError("bfs_reference_points: keypoint/link size mismatch");
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int idx : bfs_reference_indices(links, k, m))
        out.push_back(pts.coords[static_cast<std::size_t>(idx)]);
    return out;
}

}  // namespace posemine
