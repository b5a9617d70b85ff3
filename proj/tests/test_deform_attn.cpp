#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "posemine/deform_attn.hpp"
#include "posemine/gradcheck.hpp"
#include "posemine/oracles.hpp"
#include "posemine/rng.hpp"

using namespace posemine;

namespace {

Tensor random_map(int h, int w, int d, Rng& rng) {
    Tensor t = Tensor::zeros({h, w, d});
    for (double& v : t.mutable_values()) v = rng.normal(0.0, 1.0);
    return t;
}

FeaturePyramid tiny_pyramid(int d, Rng& rng) {
    FeaturePyramid pyr;
    pyr.levels.push_back(random_map(4, 4, d, rng));
    pyr.levels.push_back(random_map(2, 2, d, rng));
    return pyr;
}

// Connected random links for a K-keypoint set.
LinkMatrix random_links(int k, Rng& rng) {
    LinkMatrix links(k);
    for (int v = 1; v < k; ++v) links.set(v, rng.uniform_int(0, v - 1), true);
    return links;
}

Tensor random_coords(int k, Rng& rng) {
    Tensor t = Tensor::zeros({k, 2});
    for (double& v : t.mutable_values()) v = rng.uniform(0.1, 0.9);
    return t;
}

// Head parameters with every projection filled randomly (no registry).
AttentionHeadParams random_head(int d, int m_heads, int levels, int s, Rng& rng) {
    AttentionHeadParams hp;
    hp.s = s;
    hp.levels = levels;
    const int dm = d / m_heads;
    const int n = levels * s;
    auto rnd = [&](Shape shape, double sd) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.mutable_values()) v = rng.normal(0.0, sd);
        return t;
    };
    hp.value_w = rnd({d, dm}, 0.5);
    hp.value_b = rnd({dm}, 0.1);
    hp.offset_w = rnd({d, n * 2}, 0.3);
    hp.offset_b = rnd({n * 2}, 0.5);
    hp.weight_w = rnd({d, n}, 0.4);
    hp.weight_b = rnd({n}, 0.2);
    hp.out_w = rnd({dm, d}, 0.5);
    return hp;
}

FgsaMinerParams random_miner(int d, int m_heads, int levels, int s, Rng& rng) {
    FgsaMinerParams mp;
    for (int m = 0; m < m_heads; ++m) mp.heads.push_back(random_head(d, m_heads, levels, s, rng));
    auto rnd = [&](Shape shape, double sd) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.mutable_values()) v = rng.normal(0.0, sd);
        return t;
    };
    mp.ln_gamma = rnd({d}, 0.2);
    for (double& v : mp.ln_gamma.mutable_values()) v += 1.0;
    mp.ln_beta = rnd({d}, 0.1);
    mp.ffn_w1 = rnd({d, 2 * d}, 0.3);
    mp.ffn_b1 = rnd({2 * d}, 0.1);
    mp.ffn_w2 = rnd({2 * d, d}, 0.3);
    mp.ffn_b2 = rnd({d}, 0.1);
    return mp;
}

FgsaMinerParams zero_miner(int d, int m_heads, int levels, int s) {
    FgsaMinerParams mp;
    const int dm = d / m_heads;
    const int n = levels * s;
    for (int m = 0; m < m_heads; ++m) {
        AttentionHeadParams hp;
        hp.s = s;
        hp.levels = levels;
        hp.value_w = Tensor::zeros({d, dm});
        hp.value_b = Tensor::zeros({dm});
        hp.offset_w = Tensor::zeros({d, n * 2});
        hp.offset_b = Tensor::zeros({n * 2});
        hp.weight_w = Tensor::zeros({d, n});
        hp.weight_b = Tensor::zeros({n});
        hp.out_w = Tensor::zeros({dm, d});
        mp.heads.push_back(hp);
    }
    mp.ln_gamma = Tensor::full({d}, 1.0);
    mp.ln_beta = Tensor::zeros({d});
    mp.ffn_w1 = Tensor::zeros({d, 2 * d});
    mp.ffn_b1 = Tensor::zeros({2 * d});
    mp.ffn_w2 = Tensor::zeros({2 * d, d});
    mp.ffn_b2 = Tensor::zeros({d});
    return mp;
}

}  // namespace

TEST_CASE("bilinear: constants, pixel centers, 2x2 midpoint") {
    Tensor constant = Tensor::full({3, 5, 2}, 4.25);
    // Interior means inside the pixel-center hull; nearer the border the
    // zero padding correctly bleeds in.
    for (Vec2 p : {Vec2{0.3, 0.4}, Vec2{0.51, 0.77}, Vec2{0.15, 0.2}}) {
        Tensor out = bilinear_sample(constant, p);
        CHECK(out.at(0) == doctest::Approx(4.25).epsilon(1e-14));
        CHECK(out.at(1) == doctest::Approx(4.25).epsilon(1e-14));
    }

    Rng rng(31);
    Tensor map = random_map(4, 6, 3, rng);
    const int u = 2, v = 1;
    Tensor out = bilinear_sample(map, Vec2{(u + 0.5) / 6.0, (v + 0.5) / 4.0});
    for (int c = 0; c < 3; ++c)
        CHECK(out.at(c) == doctest::Approx(map.at((v * 6 + u) * 3 + c)).epsilon(1e-14));

    Tensor small = Tensor::from({0.0, 1.0, 2.0, 3.0}, {2, 2, 1});
    CHECK(bilinear_sample(small, Vec2{0.5, 0.5}).at(0) == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("bilinear is continuous in p") {
    Rng rng(32);
    Tensor map = random_map(5, 5, 2, rng);
    double max_map = 0.0;
    for (double v : map.values()) max_map = std::max(max_map, std::fabs(v));
    const double delta = 1e-6;
    for (int trial = 0; trial < 200; ++trial) {
        const Vec2 p{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
        Tensor a = bilinear_sample(map, p);
        Tensor b = bilinear_sample(map, Vec2{p[0] + delta, p[1] - delta});
        for (int c = 0; c < 2; ++c)
            CHECK(std::fabs(a.at(c) - b.at(c)) <= 40.0 * delta * max_map);
    }
}

TEST_CASE("bilinear matches its oracle everywhere including borders") {
    Rng rng(33);
    Tensor map = random_map(3, 4, 2, rng);
    for (int trial = 0; trial < 200; ++trial) {
        const double x = rng.uniform(-0.5, 1.5), y = rng.uniform(-0.5, 1.5);
        Tensor got = bilinear_sample(map, Vec2{x, y});
        const auto want = oracle_bilinear(map, x, y);
        for (int c = 0; c < 2; ++c) CHECK(std::fabs(got.at(c) - want[c]) < 1e-12);
    }
}

TEST_CASE("att_head on constant maps reduces to the value projection") {
    Rng rng(34);
    const int d = 4, m_heads = 2;
    FeaturePyramid pyr;
    pyr.levels.push_back(Tensor::full({4, 4, d}, 0.7));
    pyr.levels.push_back(Tensor::full({2, 2, d}, 0.7));
    AttentionHeadParams hp = random_head(d, m_heads, 2, 2, rng);
    // Keep every sampling location inside the maps so the constant really is
    // all the head can see.
    for (double& v : hp.offset_w.mutable_values()) v = 0.0;
    for (double& v : hp.offset_b.mutable_values()) v = 0.0;

    Tensor f = Tensor::from({0.3, -0.2, 0.9, 0.1}, {d});
    Tensor out = att_head(f, pyr, Vec2{0.5, 0.5}, hp);

    std::vector<double> cvec(d, 0.7);
    for (int c2 = 0; c2 < d / m_heads; ++c2) {
        double want = hp.value_b.at(c2);
        for (int c = 0; c < d; ++c) want += 0.7 * hp.value_w.at(c * (d / m_heads) + c2);
        CHECK(out.at(c2) == doctest::Approx(want).epsilon(1e-12));
    }

    for (double& v : hp.value_w.mutable_values()) v = 0.0;
    for (double& v : hp.value_b.mutable_values()) v = 0.0;
    Tensor zero = att_head(f, pyr, Vec2{0.5, 0.5}, hp);
    for (int c2 = 0; c2 < d / m_heads; ++c2) CHECK(zero.at(c2) == 0.0);
}

TEST_CASE("att_head matches brute-force enumeration on random tiny instances") {
    Rng rng(35);
    for (int trial = 0; trial < 25; ++trial) {
        const int d = 4;
        FeaturePyramid pyr = tiny_pyramid(d, rng);
        AttentionHeadParams hp = random_head(d, 2, 2, 2, rng);
        Tensor f = Tensor::zeros({d});
        for (double& v : f.mutable_values()) v = rng.normal(0.0, 1.0);
        const Vec2 p{rng.uniform(), rng.uniform()};
        Tensor got = att_head(f, pyr, p, hp);
        const auto want = oracle_att_head(f, pyr, p, hp);
        REQUIRE(got.numel() == want.size());
        for (std::size_t c = 0; c < want.size(); ++c)
            CHECK(std::fabs(got.at(c) - want[c]) < 1e-10);
    }
}

TEST_CASE("attention weights are nonnegative and sum to one") {
    Rng rng(36);
    const int d = 4;
    FeaturePyramid pyr = tiny_pyramid(d, rng);
    AttentionHeadParams hp = random_head(d, 2, 2, 3, rng);
    Tensor f = Tensor::zeros({d});
    for (double& v : f.mutable_values()) v = rng.normal(0.0, 2.0);
    FgsaDebug::HeadTrace tr;
    att_head(f, pyr, Vec2{0.4, 0.6}, hp, &tr);
    REQUIRE(tr.weights.size() == 2u * 3u);
    double sum = 0.0;
    for (double w : tr.weights) {
        CHECK(w >= 0.0);
        sum += w;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

TEST_CASE("fgsa_mine with all-zero mixing and feed-forward is the identity") {
    Rng rng(37);
    const int d = 4, k = 3;
    FeaturePyramid pyr = tiny_pyramid(d, rng);
    FgsaMinerParams mp = zero_miner(d, 2, 2, 2);
    Tensor F = Tensor::zeros({k, d});
    for (double& v : F.mutable_values()) v = rng.normal(0.0, 1.0);
    Tensor P = random_coords(k, rng);
    LinkMatrix links = random_links(k, rng);
    Tensor out = fgsa_mine(F, pyr, P, links, mp);
    CHECK(out.values() == F.values());
}

TEST_CASE("fgsa_mine matches the composed brute-force oracle") {
    Rng rng(38);
    // A fixed K=2 chain with M=2 first, then random small instances.
    for (int trial = 0; trial < 25; ++trial) {
        const int d = 4;
        const int k = trial == 0 ? 2 : rng.uniform_int(2, 4);
        const int m_heads = trial == 0 ? 2 : (d % 4 == 0 ? rng.uniform_int(1, 4) : 2);
        if (d % m_heads != 0) continue;
        FeaturePyramid pyr = tiny_pyramid(d, rng);
        FgsaMinerParams mp = random_miner(d, m_heads, 2, 2, rng);
        Tensor F = Tensor::zeros({k, d});
        for (double& v : F.mutable_values()) v = rng.normal(0.0, 1.0);
        Tensor P = random_coords(k, rng);
        LinkMatrix links = random_links(k, rng);

        Tensor got = fgsa_mine(F, pyr, P, links, mp);
        const auto want = oracle_fgsa_mine(F, pyr, P, links, mp);
        REQUIRE(got.numel() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(std::fabs(got.at(i) - want[i]) < 1e-10);
    }
}

TEST_CASE("edgeless links make every head attend at the keypoint itself") {
    Rng rng(39);
    const int d = 4, k = 3;
    FeaturePyramid pyr = tiny_pyramid(d, rng);
    FgsaMinerParams mp = random_miner(d, 2, 2, 2, rng);
    Tensor F = Tensor::zeros({k, d});
    for (double& v : F.mutable_values()) v = rng.normal(0.0, 1.0);
    Tensor P = random_coords(k, rng);
    LinkMatrix no_edges(k);

    FgsaDebug dbg;
    Tensor a = fgsa_mine(F, pyr, P, no_edges, mp, /*identical_refs=*/false, &dbg);
    for (const auto& refs : dbg.ref_indices)
        for (std::size_t m = 1; m < refs.size(); ++m) CHECK(refs[m] == refs[0]);

    LinkMatrix chain = random_links(k, rng);
    Tensor b = fgsa_mine(F, pyr, P, chain, mp, /*identical_refs=*/true);
    CHECK(a.values() == b.values());
}

TEST_CASE("heatmap_pool: constants, delta limit, hand-computed 2x2 case") {
    FeaturePyramid constant;
    constant.levels.push_back(Tensor::full({4, 4, 3}, 2.5));
    KeypointSet pts;
    pts.coords = {{0.3, 0.6}, {0.9, 0.1}, {0.5, 0.5}};
    pts.weight = {1.0, 1.0, 0.0};
    pts.raw_count = 3;
    Tensor pooled = heatmap_pool(constant, pts, 0.1);
    for (int c = 0; c < 3; ++c) {
        CHECK(pooled.at(0 * 3 + c) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(pooled.at(1 * 3 + c) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(pooled.at(2 * 3 + c) == 0.0);  // weight-0 keypoint
    }

    Rng rng(40);
    FeaturePyramid pyr;
    pyr.levels.push_back(random_map(4, 4, 2, rng));
    KeypointSet at_center;
    at_center.coords = {{(2 + 0.5) / 4.0, (1 + 0.5) / 4.0}};
    at_center.weight = {1.0};
    at_center.raw_count = 1;
    Tensor narrow = heatmap_pool(pyr, at_center, 0.005);
    for (int c = 0; c < 2; ++c)
        CHECK(narrow.at(c) == doctest::Approx(pyr.levels[0].at((1 * 4 + 2) * 2 + c)).epsilon(1e-12));

    // 2x2 map, keypoint at the image center: all four pixels are equidistant,
    // so the pooled row is the plain mean whatever sigma is.
    FeaturePyramid two;
    two.levels.push_back(Tensor::from({1.0, 2.0, 3.0, 4.0}, {2, 2, 1}));
    KeypointSet mid;
    mid.coords = {{0.5, 0.5}};
    mid.weight = {1.0};
    mid.raw_count = 1;
    Tensor m = heatmap_pool(two, mid, 0.25);
    CHECK(m.at(0) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("att_head gradients pass finite differences for every input") {
    Rng rng(41);
    const int d = 4;
    FeaturePyramid pyr = tiny_pyramid(d, rng);
    AttentionHeadParams hp = random_head(d, 2, 2, 2, rng);
    Tensor f = Tensor::zeros({d});
    for (double& v : f.mutable_values()) v = rng.normal(0.0, 1.0);
    Tensor p = Tensor::from({0.43, 0.57}, {2});

    auto fn = [&]() { return sum_all(mul(att_head(f, pyr, p, hp), att_head(f, pyr, p, hp))); };
    auto res = fd_gradcheck(fn,
                            {{"f", f},
                             {"p", p},
                             {"map0", pyr.levels[0]},
                             {"map1", pyr.levels[1]},
                             {"value_w", hp.value_w},
                             {"value_b", hp.value_b},
                             {"offset_w", hp.offset_w},
                             {"offset_b", hp.offset_b},
                             {"weight_w", hp.weight_w},
                             {"weight_b", hp.weight_b}},
                            1e-5);
    INFO("worst ", res.worst, " rel ", res.max_rel);
    CHECK(res.pass(1e-4));
}

TEST_CASE("fgsa_mine gradients pass finite differences") {
    Rng rng(42);
    const int d = 4, k = 3;
    FeaturePyramid pyr = tiny_pyramid(d, rng);
    FgsaMinerParams mp = random_miner(d, 2, 2, 2, rng);
    Tensor F = Tensor::zeros({k, d});
    for (double& v : F.mutable_values()) v = rng.normal(0.0, 0.7);
    Tensor P = random_coords(k, rng);
    LinkMatrix links = random_links(k, rng);

    auto fn = [&]() {
        Tensor out = fgsa_mine(F, pyr, P, links, mp);
        return sum_all(mul(out, out));
    };
    auto res = fd_gradcheck(fn,
                            {{"F", F},
                             {"P", P},
                             {"map0", pyr.levels[0]},
                             {"out_w0", mp.heads[0].out_w},
                             {"offset_b1", mp.heads[1].offset_b},
                             {"weight_w0", mp.heads[0].weight_w},
                             {"ln_gamma", mp.ln_gamma},
                             {"ffn_w1", mp.ffn_w1},
                             {"ffn_w2", mp.ffn_w2}},
                            1e-5);
    INFO("worst ", res.worst, " rel ", res.max_rel);
    CHECK(res.pass(1e-4));
}

TEST_CASE("heatmap_pool gradients pass finite differences") {
    Rng rng(43);
    FeaturePyramid pyr;
    pyr.levels.push_back(random_map(4, 4, 2, rng));
    KeypointSet pts;
    pts.coords = {{0.3, 0.4}, {0.8, 0.2}};
    pts.weight = {1.0, 1.0};
    pts.raw_count = 2;
    auto fn = [&]() {
        Tensor out = heatmap_pool(pyr, pts, 0.15);
        return sum_all(mul(out, out));
    };
    auto res = fd_gradcheck(fn, {{"map", pyr.levels[0]}}, 1e-5);
    CHECK(res.pass(1e-4));
}

TEST_CASE("registered miner parameters start at a stable deterministic state") {
    Rng rng1(55), rng2(55);
    ParamRegistry r1, r2;
    FgsaMinerParams a = make_fgsa_miner(r1, "miner", 8, 2, 2, 4, rng1);
    FgsaMinerParams b = make_fgsa_miner(r2, "miner", 8, 2, 2, 4, rng2);
    CHECK(r1.flatten() == r2.flatten());
    CHECK(r1.count() == r2.count());

    // Offset biases aim the two heads in opposite directions.
    CHECK(a.heads[0].offset_b.at(0) == doctest::Approx(0.5));   // cos(0) * first radius
    CHECK(a.heads[1].offset_b.at(0) == doctest::Approx(-0.5));  // cos(pi) * first radius
    // Weight projection zero -> uniform attention at the start.
    for (double v : b.heads[0].weight_w.values()) CHECK(v == 0.0);
}
