#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "posemine/pose_graph.hpp"
#include "posemine/rng.hpp"

using namespace posemine;

namespace {

KeypointSet make_set(std::vector<Vec2> coords, std::vector<double> weight = {}) {
    KeypointSet s;
    s.coords = std::move(coords);
    s.weight = weight.empty() ? std::vector<double>(s.coords.size(), 1.0) : std::move(weight);
    s.raw_count = s.size();
    return s;
}

// Random connected graph: a spanning tree plus a few extra edges.
LinkMatrix random_connected_links(int k, Rng& rng) {
    LinkMatrix links(k);
    for (int v = 1; v < k; ++v) links.set(v, rng.uniform_int(0, v - 1), true);
    const int extra = rng.uniform_int(0, 2);
    for (int e = 0; e < extra && k >= 2; ++e) {
        const int a = rng.uniform_int(0, k - 1);
        const int b = rng.uniform_int(0, k - 1);
        if (a != b) links.set(a, b, true);
    }
    return links;
}

KeypointSet random_points(int k, Rng& rng) {
    KeypointSet s;
    for (int i = 0; i < k; ++i) s.coords.push_back({rng.uniform(), rng.uniform()});
    s.weight.assign(static_cast<std::size_t>(k), 1.0);
    s.raw_count = k;
    return s;
}

// Brute-force reachability closure over an adjacency matrix.
std::vector<std::vector<char>> reachability(const LinkMatrix& links) {
    const int k = links.size();
    std::vector<std::vector<char>> reach(static_cast<std::size_t>(k),
                                         std::vector<char>(static_cast<std::size_t>(k), 0));
    for (int i = 0; i < k; ++i) reach[i][i] = 1;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            if (links.at(i, j)) reach[i][j] = 1;
    for (int m = 0; m < k; ++m)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                if (reach[i][m] && reach[m][j]) reach[i][j] = 1;
    return reach;
}

}  // namespace

TEST_CASE("mixup_pad with K == K_c is the identity") {
    Rng rng(1);
    KeypointSet s = make_set({{0.1, 0.2}, {0.8, 0.9}});
    LinkMatrix links(2);
    links.set(0, 1, true);
    auto res = mixup_pad(s, links, 2, 1.0, rng);
    CHECK(res.points.coords == s.coords);
    CHECK(res.points.weight == s.weight);
    CHECK(res.record.entries.empty());
    CHECK(res.links == links);
}

TEST_CASE("forced lambda 0.25 on one link lands at 0.75 and rewires the chain") {
    KeypointSet s = make_set({{0.0, 0.0}, {1.0, 1.0}});
    LinkMatrix links(2);
    links.set(0, 1, true);
    PaddingRecord rec;
    rec.entries.push_back({0, 1, 0.25, 0});
    auto padded = apply_record(s, links, rec, 3, PadWeightRule::kOne);
    CHECK(padded.points.coords[2][0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(padded.points.coords[2][1] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(padded.points.weight[2] == 1.0);
    CHECK(padded.links.at(0, 2));
    CHECK(padded.links.at(2, 1));
    CHECK_FALSE(padded.links.at(0, 1));
}

TEST_CASE("padded points are collinear with their sources and the record replays exactly") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const int kc = rng.uniform_int(3, 8);
        const int target = kc + rng.uniform_int(0, 8);
        KeypointSet s = random_points(kc, rng);
        LinkMatrix links = random_connected_links(kc, rng);
        auto res = mixup_pad(s, links, target, 1.0, rng);
        for (std::size_t t = 0; t < res.record.entries.size(); ++t) {
            const PadEntry& e = res.record.entries[t];
            const Vec2 p = res.points.coords[static_cast<std::size_t>(kc) + t];
            const Vec2 want{e.lambda * s.coords[e.i][0] + (1 - e.lambda) * s.coords[e.j][0],
                            e.lambda * s.coords[e.i][1] + (1 - e.lambda) * s.coords[e.j][1]};
            CHECK(std::fabs(p[0] - want[0]) < 1e-12);
            CHECK(std::fabs(p[1] - want[1]) < 1e-12);
            CHECK(links.at(e.i, e.j));
        }
        auto replay = apply_record(s, links, res.record, target, PadWeightRule::kOne);
        CHECK(replay.points.coords == res.points.coords);
        CHECK(replay.links == res.links);
    }
}

TEST_CASE("padding preserves raw-to-raw connectivity, symmetry, zero diagonal") {
    Rng rng(22);
    for (int trial = 0; trial < 1000; ++trial) {
        const int kc = rng.uniform_int(2, 7);
        const int target = kc + rng.uniform_int(0, 6);
        KeypointSet s = random_points(kc, rng);
        LinkMatrix links = random_connected_links(kc, rng);
        auto res = mixup_pad(s, links, target, 1.0, rng);

        for (int i = 0; i < target; ++i) {
            REQUIRE_FALSE(res.links.at(i, i));
            for (int j = 0; j < target; ++j) REQUIRE(res.links.at(i, j) == res.links.at(j, i));
        }
        const auto before = reachability(links);
        const auto after = reachability(res.links);
        for (int i = 0; i < kc; ++i)
            for (int j = 0; j < kc; ++j) REQUIRE(before[i][j] == after[i][j]);
    }
}

TEST_CASE("paired padding shares pairs and lambdas; identical inputs pad identically") {
    Rng rng(23);
    KeypointSet sup = random_points(5, rng);
    LinkMatrix links = random_connected_links(5, rng);

    auto same = mixup_pad_pair(sup, sup, links, 9, 1.0, rng);
    CHECK(same.support.coords == same.query.coords);

    KeypointSet q = random_points(5, rng);
    auto pair = mixup_pad_pair(sup, q, links, 9, 1.0, rng);
    REQUIRE(pair.record.entries.size() == 4);
    for (std::size_t t = 0; t < pair.record.entries.size(); ++t) {
        const PadEntry& e = pair.record.entries[t];
        const Vec2 ps = pair.support.coords[5 + t];
        const Vec2 pq = pair.query.coords[5 + t];
        CHECK(std::fabs(ps[0] - (e.lambda * sup.coords[e.i][0] + (1 - e.lambda) * sup.coords[e.j][0])) < 1e-12);
        CHECK(std::fabs(pq[0] - (e.lambda * q.coords[e.i][0] + (1 - e.lambda) * q.coords[e.j][0])) < 1e-12);
    }
}

TEST_CASE("padded query weight is the min over source weights") {
    Rng rng(24);
    // Enumerate the four visibility combinations of a single link's endpoints.
    for (double wi : {0.0, 1.0}) {
        for (double wj : {0.0, 1.0}) {
            KeypointSet sup = make_set({{0.2, 0.2}, {0.8, 0.8}});
            KeypointSet q = make_set({{0.3, 0.3}, {0.7, 0.7}}, {wi, wj});
            LinkMatrix links(2);
            links.set(0, 1, true);
            auto pair = mixup_pad_pair(sup, q, links, 4, 1.0, rng);
            for (int t = 2; t < 4; ++t) {
                CHECK(pair.query.weight[t] == std::min(wi, wj));
                CHECK(pair.support.weight[t] == 1.0);
            }
        }
    }
}

TEST_CASE("uniform_pad: midpoint, equal division, round-robin counts") {
    KeypointSet s = make_set({{0.0, 0.0}, {1.0, 1.0}});
    LinkMatrix links(2);
    links.set(0, 1, true);

    auto one = uniform_pad(s, links, 3);
    CHECK(one.points.coords[2][0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(one.points.coords[2][1] == doctest::Approx(0.5).epsilon(1e-15));

    auto three = uniform_pad(s, links, 5);
    std::vector<double> lambdas;
    for (const auto& e : three.record.entries) lambdas.push_back(e.lambda);
    std::sort(lambdas.begin(), lambdas.end());
    CHECK(lambdas[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(lambdas[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(lambdas[2] == doctest::Approx(0.75).epsilon(1e-15));

    KeypointSet s3 = make_set({{0.0, 0.0}, {1.0, 1.0}, {1.0, 0.0}});
    LinkMatrix links3(3);
    links3.set(0, 1, true);
    links3.set(1, 2, true);
    auto rr = uniform_pad(s3, links3, 6);
    int on_first = 0, on_second = 0;
    for (const auto& e : rr.record.entries) {
        if (e.i == 0 && e.j == 1) ++on_first;
        if (e.i == 1 && e.j == 2) ++on_second;
    }
    CHECK(on_first == 2);
    CHECK(on_second == 1);
}

TEST_CASE("uniform_pad is a pure function (bitwise repeatable)") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        const int kc = rng.uniform_int(2, 7);
        KeypointSet s = random_points(kc, rng);
        LinkMatrix links = random_connected_links(kc, rng);
        auto a = uniform_pad(s, links, kc + 5);
        auto b = uniform_pad(s, links, kc + 5);
        CHECK(a.points.coords == b.points.coords);
        CHECK(a.points.weight == b.points.weight);
        CHECK(a.links == b.links);
    }
}

TEST_CASE("zero_pad places invisible center points and keeps losses unaffected") {
    KeypointSet s = make_set({{0.1, 0.1}, {0.9, 0.9}});
    CHECK(zero_pad(s, 2).coords == s.coords);

    KeypointSet p = zero_pad(s, 4);
    CHECK(p.weight == std::vector<double>{1.0, 1.0, 0.0, 0.0});
    CHECK(p.coords[2] == Vec2{0.5, 0.5});
    CHECK(p.coords[3] == Vec2{0.5, 0.5});
    CHECK(p.raw_count == 2);
}

TEST_CASE("no-link classes fall back to zero padding with a flag") {
    Rng rng(26);
    KeypointSet s = make_set({{0.1, 0.1}, {0.9, 0.9}});
    LinkMatrix links(2);
    auto res = mixup_pad(s, links, 4, 1.0, rng);
    CHECK(res.record.no_link_fallback);
    CHECK(res.points.weight == std::vector<double>{1.0, 1.0, 0.0, 0.0});
    auto ures = uniform_pad(s, links, 4);
    CHECK(ures.record.no_link_fallback);
}

TEST_CASE("bfs reference points: start point, isolated cycling, chain order") {
    KeypointSet s = make_set({{0.0, 0.0}, {0.25, 0.0}, {0.5, 0.0}, {0.75, 0.0}});
    LinkMatrix chain(4);
    chain.set(0, 1, true);
    chain.set(1, 2, true);
    chain.set(2, 3, true);

    CHECK(bfs_reference_indices(chain, 2, 1) == std::vector<int>{2});

    LinkMatrix isolated(4);
    isolated.set(0, 1, true);  // keypoint 3 has no incident links
    CHECK(bfs_reference_indices(isolated, 3, 4) == std::vector<int>{3, 3, 3, 3});

    CHECK(bfs_reference_indices(chain, 1, 4) == std::vector<int>{1, 0, 2, 3});
    const auto pts = bfs_reference_points(s, chain, 1, 4);
    CHECK(pts[0] == s.coords[1]);
    CHECK(pts[1] == s.coords[0]);
    CHECK(pts[2] == s.coords[2]);
    CHECK(pts[3] == s.coords[3]);
}

TEST_CASE("bfs output is a permutation-with-repetition of existing keypoints") {
    Rng rng(27);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = rng.uniform_int(2, 9);
        LinkMatrix links = random_connected_links(k, rng);
        const int start = rng.uniform_int(0, k - 1);
        const int m = rng.uniform_int(1, 12);
        const auto idx = bfs_reference_indices(links, start, m);
        REQUIRE(static_cast<int>(idx.size()) == m);
        CHECK(idx[0] == start);
        for (int v : idx) CHECK((v >= 0 && v < k));
        CHECK(bfs_reference_indices(links, start, m) == idx);  // deterministic

        // Cycling: the reachable prefix repeats verbatim.
        std::set<int> unique(idx.begin(), idx.end());
        const int reach = static_cast<int>(unique.size());
        for (std::size_t t = 0; t + static_cast<std::size_t>(reach) < idx.size(); ++t)
            CHECK(idx[t] == idx[t + static_cast<std::size_t>(reach)]);
    }
}

TEST_CASE("lambda draws with alpha=1 pass a KS test against Uniform(0,1)") {
    Rng rng(28);
    const int n = 10000;
    std::vector<double> draws;
    draws.reserve(n);
    KeypointSet s = make_set({{0.0, 0.0}, {1.0, 1.0}});
    LinkMatrix links(2);
    links.set(0, 1, true);
    while (static_cast<int>(draws.size()) < n) {
        auto rec = sample_mixup_record(2, links, 2 + 50, 1.0, rng);
        for (const auto& e : rec.entries) {
            draws.push_back(e.lambda);
            if (static_cast<int>(draws.size()) == n) break;
        }
    }
    std::sort(draws.begin(), draws.end());
    double d_stat = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = draws[static_cast<std::size_t>(i)];
        d_stat = std::max(d_stat, std::fabs(f - static_cast<double>(i) / n));
        d_stat = std::max(d_stat, std::fabs(static_cast<double>(i + 1) / n - f));
    }
    const double d_crit = 1.62762 / std::sqrt(static_cast<double>(n));  // significance 0.01
    CHECK(d_stat < d_crit);
}

TEST_CASE("contract violations are rejected") {
    Rng rng(29);
    KeypointSet s = make_set({{0.1, 0.1}, {0.9, 0.9}});
    LinkMatrix links(2);
    links.set(0, 1, true);
    CHECK_THROWS_AS(mixup_pad(s, links, 1, 1.0, rng), ContractError);

    KeypointSet bigger = make_set({{0.1, 0.1}, {0.9, 0.9}, {0.5, 0.5}});
    CHECK_THROWS_AS(mixup_pad_pair(s, bigger, links, 5, 1.0, rng), ContractError);

    KeypointSet bad = make_set({{1.5, 0.0}});
    CHECK_THROWS_AS(validate_keypoints(bad), ContractError);

    LinkMatrix lm(3);
    CHECK_THROWS_AS(lm.set(1, 1, true), ContractError);
}
