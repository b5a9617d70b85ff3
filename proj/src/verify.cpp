#include "posemine/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "posemine/backbone.hpp"
#include "posemine/losses.hpp"
#include "posemine/metrics.hpp"
#include "posemine/model.hpp"
#include "posemine/oracles.hpp"
#include "posemine/pose_graph.hpp"

namespace posemine {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

Tensor rand_t(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
}

// Collects named finite-difference checks into one suite verdict.
struct GradSuite {
    bool pass = true;
    double worst_rel = 0.0;
    std::string worst_name = "-";
    std::string failures;

    void run(const std::string& name, const std::function<Tensor()>& fn,
             const std::vector<std::pair<std::string, Tensor>>& leaves, double tol,
             double h = 1e-5) {
        const GradCheckResult r = fd_gradcheck(fn, leaves, h);
        if (r.max_rel > worst_rel) {
            worst_rel = r.max_rel;
            worst_name = name + "/" + r.worst;
        }
        if (!r.pass(tol)) {
            pass = false;
            failures += (failures.empty() ? "" : "; ") + name + " rel " + fmt(r.max_rel) +
                        " at " + r.worst;
        }
    }

    SuiteResult result(std::string suite_name) const {
        SuiteResult out;
        out.name = std::move(suite_name);
        out.pass = pass;
        out.detail = pass ? "worst rel " + fmt(worst_rel) + " (" + worst_name + ")" : failures;
        return out;
    }
};

// Adds noise so zero-initialized projections (offsets, attention logits, the
// refinement and feed-forward output layers) carry gradient instead of
// short-circuiting whole subgraphs to zero.
void jitter_params(ParamRegistry& reg, Rng& rng, double scale) {
    for (const auto& [name, entry] : reg.entries()) {
        Tensor t = entry;
        for (double& v : t.mutable_values()) v += rng.normal(0.0, scale);
    }
}

// Undirected reachability closure by repeated squaring of the reachable set.
std::vector<char> reach_closure(const LinkMatrix& links) {
    const int k = links.size();
    std::vector<char> reach(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0);
    for (int i = 0; i < k; ++i) {
        reach[static_cast<std::size_t>(i * k + i)] = 1;
        for (int j = 0; j < k; ++j)
            if (i != j && links.at(i, j)) reach[static_cast<std::size_t>(i * k + j)] = 1;
    }
    for (int m = 0; m < k; ++m)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                if (reach[static_cast<std::size_t>(i * k + m)] &&
                    reach[static_cast<std::size_t>(m * k + j)])
                    reach[static_cast<std::size_t>(i * k + j)] = 1;
    return reach;
}

KeypointSet random_keypoints(Rng& rng, int k) {
    KeypointSet s;
    s.raw_count = k;
    for (int i = 0; i < k; ++i) {
        s.coords.push_back({rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
        s.weight.push_back(rng.uniform() < 0.15 ? 0.0 : 1.0);
    }
    return s;
}

LinkMatrix random_connected_links(Rng& rng, int k) {
    LinkMatrix links(k);
    for (int i = 1; i < k; ++i) links.set(i, rng.uniform_int(0, i - 1), true);
    const int extras = rng.uniform_int(0, 2);
    for (int e = 0; e < extras; ++e) {
        const int a = rng.uniform_int(0, k - 1);
        const int b = rng.uniform_int(0, k - 1);
        if (a != b) links.set(a, b, true);
    }
    return links;
}

FeaturePyramid leaf_pyramid(const std::vector<Tensor>& maps) {
    FeaturePyramid pyr;
    pyr.levels = maps;
    return pyr;
}

}  // namespace

SuiteResult verify_op_gradients() {
    Rng rng(0x6f7073ULL);
    GradSuite suite;
    const double tol = 1e-4;

    {
        Tensor a = rand_t(rng, {3, 4}), b = rand_t(rng, {3, 4}), c = rand_t(rng, {3, 4});
        suite.run("add", [&] { return sum_all(mul(add(a, b), c)); }, {{"a", a}, {"b", b}}, tol);
        suite.run("sub", [&] { return sum_all(mul(sub(a, b), c)); }, {{"a", a}, {"b", b}}, tol);
        suite.run("mul", [&] { return sum_all(mul(mul(a, b), c)); }, {{"a", a}, {"b", b}}, tol);
        suite.run("smul", [&] { return sum_all(mul(smul(a, 1.7), c)); }, {{"a", a}}, tol);
        suite.run("sigmoid", [&] { return sum_all(mul(sigmoid(a), c)); }, {{"a", a}}, tol);
        suite.run("gelu", [&] { return sum_all(mul(gelu(a), c)); }, {{"a", a}}, tol);
        suite.run("mean_all", [&] { return mean_all(mul(a, c)); }, {{"a", a}}, tol);
        suite.run("reshape", [&] { return sum_all(mul(reshape(a, {2, 6}), reshape(c, {2, 6}))); },
                  {{"a", a}}, tol);
    }
    {
        // abs has a kink at zero: keep magnitudes above 0.3 so the centered
        // difference never straddles it.
        Tensor a = rand_t(rng, {3, 4}, 0.3, 1.3), c = rand_t(rng, {3, 4});
        for (std::size_t i = 0; i < a.values().size(); i += 2)
            a.mutable_values()[i] = -a.values()[i];
        suite.run("abs_val", [&] { return sum_all(mul(abs_val(a), c)); }, {{"a", a}}, tol);
    }
    {
        Tensor a = rand_t(rng, {3, 4}, 0.1, 0.9), c = rand_t(rng, {3, 4});
        suite.run("logit", [&] { return sum_all(mul(logit(a), c)); }, {{"a", a}}, tol);
    }
    {
        Tensor a = rand_t(rng, {3, 4}), b = rand_t(rng, {4, 5}), bias = rand_t(rng, {5});
        Tensor c = rand_t(rng, {3, 5});
        suite.run("matmul", [&] { return sum_all(mul(matmul(a, b), c)); },
                  {{"a", a}, {"b", b}}, tol);
        suite.run("linear", [&] { return sum_all(mul(linear(a, b, bias), c)); },
                  {{"a", a}, {"w", b}, {"b", bias}}, tol);
        Tensor x = rand_t(rng, {4});
        Tensor cv = rand_t(rng, {5});
        suite.run("linear_vec", [&] { return sum_all(mul(linear(x, b, bias), cv)); },
                  {{"x", x}, {"w", b}, {"b", bias}}, tol);
        Tensor cs = rand_t(rng, {3, 4});
        suite.run("softmax_last", [&] { return sum_all(mul(softmax_last(a), cs)); }, {{"a", a}},
                  tol);
    }
    {
        Tensor a = rand_t(rng, {2, 3}), b = rand_t(rng, {2, 2}), c = rand_t(rng, {2, 5});
        suite.run("concat", [&] { return sum_all(mul(concat({a, b}, 1), c)); },
                  {{"a", a}, {"b", b}}, tol);
        Tensor cu = rand_t(rng, {2, 3});
        suite.run("sum_all", [&] { return sum_all(mul(a, cu)); }, {{"a", a}}, tol);
    }
    {
        Tensor x = rand_t(rng, {3, 6}), gamma = rand_t(rng, {6}, 0.5, 1.5);
        Tensor beta = rand_t(rng, {6}), c = rand_t(rng, {3, 6});
        suite.run("layer_norm", [&] { return sum_all(mul(layer_norm(x, gamma, beta), c)); },
                  {{"x", x}, {"gamma", gamma}, {"beta", beta}}, tol);
    }
    {
        Tensor x = rand_t(rng, {5, 6, 2}), w = rand_t(rng, {3, 3, 2, 3}), b = rand_t(rng, {3});
        Tensor c1 = rand_t(rng, {5, 6, 3}), c2 = rand_t(rng, {3, 3, 3});
        suite.run("conv2d_s1", [&] { return sum_all(mul(conv2d(x, w, b, 1), c1)); },
                  {{"x", x}, {"w", w}, {"b", b}}, tol);
        suite.run("conv2d_s2", [&] { return sum_all(mul(conv2d(x, w, b, 2), c2)); },
                  {{"x", x}, {"w", w}, {"b", b}}, tol);
    }
    {
        Tensor a = rand_t(rng, {4, 3}), v = rand_t(rng, {3}), c = rand_t(rng, {4, 3});
        suite.run("add_rowvec", [&] { return sum_all(mul(add_rowvec(a, v), c)); },
                  {{"a", a}, {"v", v}}, tol);
        Tensor cg = rand_t(rng, {4, 3});
        suite.run("gather_rows",
                  [&] { return sum_all(mul(gather_rows(a, {0, 2, 1, 2}), cg)); }, {{"a", a}},
                  tol);
        Tensor cs = rand_t(rng, {2, 3});
        suite.run("slice_rows", [&] { return sum_all(mul(slice_rows(a, 1, 2), cs)); },
                  {{"a", a}}, tol);
        Tensor w = rand_t(rng, {4});
        Tensor cw = rand_t(rng, {3});
        suite.run("weighted_sum_rows",
                  [&] { return sum_all(mul(weighted_sum_rows(a, w), cw)); },
                  {{"a", a}, {"w", w}}, tol);
    }
    {
        Tensor r0 = rand_t(rng, {5}), r1 = rand_t(rng, {5}), r2 = rand_t(rng, {5});
        Tensor c = rand_t(rng, {3, 5});
        suite.run("stack_rows", [&] { return sum_all(mul(stack_rows({r0, r1, r2}), c)); },
                  {{"r0", r0}, {"r1", r1}, {"r2", r2}}, tol);
        Tensor p0 = rand_t(rng, {2, 3}), p1 = rand_t(rng, {2, 3}), p2 = rand_t(rng, {2, 3});
        Tensor ca = rand_t(rng, {2, 3});
        suite.run("average", [&] { return sum_all(mul(average({p0, p1, p2}), ca)); },
                  {{"p0", p0}, {"p1", p1}, {"p2", p2}}, tol);
    }
    {
        // Loss stack over a two-layer stand-in trace; ground truth far enough
        // from the sigmoid outputs that the L1 kink stays out of reach.
        Tensor x = Tensor::from({-0.8, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8}, {4, 2});
        KeypointSet gt;
        gt.raw_count = 3;
        for (int k = 0; k < 4; ++k) {
            gt.coords.push_back({k % 2 == 0 ? 0.25 : 0.75, k % 2 == 0 ? 0.75 : 0.25});
            gt.weight.push_back(k == 2 ? 0.0 : 1.0);
        }
        suite.run("losses",
                  [&] {
                      ForwardTrace trace;
                      trace.p_q = {sigmoid(x), sigmoid(smul(x, 1.5))};
                      return loss_full(trace, gt, 0.5).full;
                  },
                  {{"x", x}}, tol);
    }
    return suite.result("op-gradients");
}

SuiteResult verify_attention_gradients() {
    Rng rng(0x61747467ULL);
    GradSuite suite;
    const double tol = 1e-4;

    {
        // Sampling locations sit clear of pixel-boundary kinks (distance to
        // the nearest boundary far exceeds the probe step).
        std::vector<Tensor> maps{rand_t(rng, {5, 4, 3}), rand_t(rng, {3, 2, 3})};
        Tensor locs = Tensor::from({0.33, 0.44, 0.61, 0.27, 0.30, 0.60, 0.77, 0.41}, {4, 2});
        Tensor c = rand_t(rng, {4, 3});
        suite.run("bilinear",
                  [&] {
                      return sum_all(mul(
                          bilinear_sample_multi(leaf_pyramid(maps), locs, {0, 0, 1, 1}), c));
                  },
                  {{"map0", maps[0]}, {"map1", maps[1]}, {"locs", locs}}, tol);
    }
    {
        ParamRegistry reg;
        AttentionHeadParams hp = make_att_head(reg, "head", 8, 2, 0, 2, 3, rng);
        jitter_params(reg, rng, 0.2);
        std::vector<Tensor> maps{rand_t(rng, {6, 6, 8}), rand_t(rng, {3, 3, 8})};
        Tensor f = rand_t(rng, {8});
        Tensor p = Tensor::from({0.52, 0.47}, {2});
        Tensor c = rand_t(rng, {4});
        std::vector<std::pair<std::string, Tensor>> leaves = reg.entries();
        leaves.emplace_back("f", f);
        leaves.emplace_back("p", p);
        leaves.emplace_back("map0", maps[0]);
        leaves.emplace_back("map1", maps[1]);
        suite.run("att_head",
                  [&] { return sum_all(mul(att_head(f, leaf_pyramid(maps), p, hp), c)); },
                  leaves, tol);
    }
    {
        ParamRegistry reg;
        Rng init = rng.fork(1);
        FgsaMinerParams mp = make_fgsa_miner(reg, "miner", 8, 2, 2, 2, init);
        jitter_params(reg, rng, 0.2);
        LinkMatrix links(3);
        links.set(0, 1, true);
        links.set(1, 2, true);
        std::vector<Tensor> maps{rand_t(rng, {6, 6, 8}), rand_t(rng, {3, 3, 8})};
        Tensor F = rand_t(rng, {3, 8});
        Tensor P = Tensor::from({0.31, 0.42, 0.58, 0.33, 0.47, 0.68}, {3, 2});
        Tensor c = rand_t(rng, {3, 8});
        std::vector<std::pair<std::string, Tensor>> leaves = reg.entries();
        leaves.emplace_back("F", F);
        leaves.emplace_back("P", P);
        leaves.emplace_back("map0", maps[0]);
        leaves.emplace_back("map1", maps[1]);
        suite.run("fgsa_mine",
                  [&] {
                      return sum_all(mul(fgsa_mine(F, leaf_pyramid(maps), P, links, mp), c));
                  },
                  leaves, tol);
    }
    {
        std::vector<Tensor> maps{rand_t(rng, {6, 5, 4})};
        KeypointSet pts;
        pts.raw_count = 3;
        pts.coords = {{0.3, 0.4}, {0.6, 0.5}, {0.45, 0.7}};
        pts.weight = {1.0, 0.5, 1.0};
        Tensor c = rand_t(rng, {3, 4});
        suite.run("heatmap_pool",
                  [&] { return sum_all(mul(heatmap_pool(leaf_pyramid(maps), pts, 0.15), c)); },
                  {{"map0", maps[0]}}, tol);
    }
    {
        ParamRegistry reg;
        Rng init = rng.fork(2);
        BackboneParams bp = make_backbone(reg, "bb", {2, 4}, 5, {4, 4}, init);
        jitter_params(reg, rng, 0.1);
        Tensor img = rand_t(rng, {16, 16, 3}, 0.0, 1.0);
        Tensor c0 = rand_t(rng, {8, 8, 5}), c1 = rand_t(rng, {4, 4, 5});
        std::vector<std::pair<std::string, Tensor>> leaves = reg.entries();
        leaves.emplace_back("image", img);
        suite.run("backbone",
                  [&] {
                      const FeaturePyramid pyr = backbone_forward(img, bp);
                      return add(sum_all(mul(pyr.levels[0], c0)),
                                 sum_all(mul(pyr.levels[1], c1)));
                  },
                  leaves, tol);
    }
    return suite.result("attention-gradients");
}

SuiteResult verify_end_to_end_gradient() {
    Rng rng(0x653265ULL);
    ModelConfig cfg;
    cfg.k_total = 4;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.channels = 8;
    cfg.samples = 4;
    cfg.image_size = 8;
    cfg.pyramid_strides = {2, 4};
    cfg.backbone_widths = {4, 4};
    PoseModel model = PoseModel::build(cfg, 0x6d6963726fULL);
    jitter_params(model.registry, rng, 0.2);

    Tensor support_img = rand_t(rng, {8, 8, 3}, 0.0, 1.0);
    Tensor query_img = rand_t(rng, {8, 8, 3}, 0.0, 1.0);

    KeypointSet support_raw;
    support_raw.raw_count = 3;
    support_raw.coords = {{0.31, 0.42}, {0.58, 0.33}, {0.47, 0.68}};
    support_raw.weight = {1.0, 1.0, 1.0};
    KeypointSet query_raw;
    query_raw.raw_count = 3;
    query_raw.coords = {{0.36, 0.47}, {0.53, 0.29}, {0.42, 0.61}};
    query_raw.weight = {1.0, 1.0, 1.0};
    LinkMatrix links(3);
    links.set(0, 1, true);
    links.set(1, 2, true);

    const PaddingRecord rec = uniform_record(3, links, 4);
    const PaddedSet support = apply_record(support_raw, links, rec, 4, PadWeightRule::kOne);
    const PaddedSet query = apply_record(query_raw, links, rec, 4, PadWeightRule::kMinSource);

    std::vector<std::pair<std::string, Tensor>> leaves = model.registry.entries();
    leaves.emplace_back("support_image", support_img);
    leaves.emplace_back("query_image", query_img);

    GradSuite suite;
    suite.run("micro_model",
              [&] {
                  const ForwardTrace trace =
                      model.forward(model.extract(query_img), {model.extract(support_img)},
                                    {support.points}, support.links);
                  return loss_full(trace, query.points, cfg.beta).full;
              },
              leaves, 1e-3, 1e-6);
    return suite.result("end-to-end-gradient");
}

SuiteResult verify_attention_oracle(int trials) {
    Rng rng(0x6f7261636cULL);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int d = 4, m = 2, s = 2;
        std::vector<Tensor> maps{rand_t(rng, {4, 4, d}), rand_t(rng, {2, 2, d})};
        const FeaturePyramid pyr = leaf_pyramid(maps);

        ParamRegistry reg;
        Rng init = rng.fork(static_cast<uint64_t>(t));
        FgsaMinerParams mp = make_fgsa_miner(reg, "m", d, m, 2, s, init);
        jitter_params(reg, rng, 0.4);

        const Tensor f = rand_t(rng, {d});
        const Vec2 p{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        const Tensor head_out = att_head(f, pyr, p, mp.heads[0]);
        const std::vector<double> head_ref = oracle_att_head(f, pyr, p, mp.heads[0]);
        for (int i = 0; i < head_out.numel(); ++i)
            worst = std::max(worst,
                             std::fabs(head_out.values()[static_cast<std::size_t>(i)] -
                                       head_ref[static_cast<std::size_t>(i)]));

        const int k = rng.uniform_int(2, 4);
        const LinkMatrix links = random_connected_links(rng, k);
        const Tensor F = rand_t(rng, {k, d});
        const Tensor P = rand_t(rng, {k, 2}, 0.1, 0.9);
        const Tensor mined = fgsa_mine(F, pyr, P, links, mp);
        const std::vector<double> mined_ref = oracle_fgsa_mine(F, pyr, P, links, mp);
        for (int i = 0; i < mined.numel(); ++i)
            worst = std::max(worst,
                             std::fabs(mined.values()[static_cast<std::size_t>(i)] -
                                       mined_ref[static_cast<std::size_t>(i)]));
    }
    SuiteResult out;
    out.name = "attention-oracle";
    out.pass = worst < 1e-10;
    out.detail = std::to_string(trials) + " trials, max abs diff " + fmt(worst);
    return out;
}

SuiteResult verify_padding_properties(int graphs) {
    Rng rng(0x70616470ULL);
    std::string failure;
    for (int g = 0; g < graphs && failure.empty(); ++g) {
        const int k = rng.uniform_int(3, 10);
        const int target = k + rng.uniform_int(0, 6);
        const KeypointSet raw = random_keypoints(rng, k);
        const LinkMatrix links = random_connected_links(rng, k);

        Rng pad_rng = rng.fork(static_cast<uint64_t>(g));
        const MixupPadResult mix = mixup_pad(raw, links, target, 1.0, pad_rng);

        // Padded points are convex mixes of their endpoints: collinear and
        // inside the segment.
        for (std::size_t t = 0; t < mix.record.entries.size(); ++t) {
            const PadEntry& e = mix.record.entries[t];
            const Vec2 pi = raw.coords[static_cast<std::size_t>(e.i)];
            const Vec2 pj = raw.coords[static_cast<std::size_t>(e.j)];
            const Vec2 pp = mix.points.coords[static_cast<std::size_t>(k) + t];
            const double cross =
                (pp[0] - pi[0]) * (pj[1] - pi[1]) - (pp[1] - pi[1]) * (pj[0] - pi[0]);
            if (std::fabs(cross) >= 1e-12) failure = "collinearity violated";
            if (pp[0] < std::min(pi[0], pj[0]) - 1e-12 ||
                pp[0] > std::max(pi[0], pj[0]) + 1e-12)
                failure = "padded point outside segment";
        }

        // Symmetric, binary, zero-diagonal adjacency.
        for (int i = 0; i < mix.links.size() && failure.empty(); ++i) {
            if (mix.links.at(i, i)) failure = "diagonal link";
            for (int j = 0; j < mix.links.size(); ++j)
                if (mix.links.at(i, j) != mix.links.at(j, i)) failure = "asymmetric link";
        }

        // Chain rewiring must not change which raw keypoints can reach which.
        const std::vector<char> before = reach_closure(links);
        const std::vector<char> after = reach_closure(mix.links);
        for (int i = 0; i < k && failure.empty(); ++i)
            for (int j = 0; j < k; ++j)
                if (before[static_cast<std::size_t>(i * k + j)] !=
                    after[static_cast<std::size_t>(i * mix.links.size() + j)])
                    failure = "raw-to-raw reachability changed";

        // Support and query replay one record: identical pairs and lambdas.
        Rng pair_rng = rng.fork(static_cast<uint64_t>(g) + 0x9000ULL);
        KeypointSet query = random_keypoints(pair_rng, k);
        const PairPadResult pair =
            mixup_pad_pair(raw, query, links, target, 1.0, pair_rng);
        for (std::size_t t = 0; t < pair.record.entries.size() && failure.empty(); ++t) {
            const PadEntry& e = pair.record.entries[t];
            const auto expect = [&](const KeypointSet& src, const KeypointSet& padded) {
                const double ex =
                    e.lambda * src.coords[static_cast<std::size_t>(e.i)][0] +
                    (1.0 - e.lambda) * src.coords[static_cast<std::size_t>(e.j)][0];
                return ex == padded.coords[static_cast<std::size_t>(k) + t][0];
            };
            if (!expect(raw, pair.support) || !expect(query, pair.query))
                failure = "shared record not replayed bit-exactly";
        }

        // Equal-division padding is a pure function.
        const MixupPadResult u1 = uniform_pad(raw, links, target);
        const MixupPadResult u2 = uniform_pad(raw, links, target);
        if (u1.points.coords != u2.points.coords || !(u1.links == u2.links))
            failure = "uniform_pad not deterministic";
    }
    SuiteResult out;
    out.name = "padding-properties";
    out.pass = failure.empty();
    out.detail = failure.empty() ? std::to_string(graphs) + " random graphs" : failure;
    return out;
}

SuiteResult verify_mixup_distribution() {
    Rng rng(0x6b73ULL);
    LinkMatrix links(4);
    links.set(0, 1, true);
    links.set(1, 2, true);
    links.set(2, 3, true);

    std::vector<double> lambdas;
    const int n = 10000;
    while (static_cast<int>(lambdas.size()) < n) {
        const PaddingRecord rec = sample_mixup_record(4, links, 9, 1.0, rng);
        for (const PadEntry& e : rec.entries) {
            if (static_cast<int>(lambdas.size()) < n) lambdas.push_back(e.lambda);
        }
    }
    std::sort(lambdas.begin(), lambdas.end());
    double d_stat = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = lambdas[static_cast<std::size_t>(i)];
        d_stat = std::max(d_stat, std::fabs((i + 1.0) / n - x));
        d_stat = std::max(d_stat, std::fabs(x - static_cast<double>(i) / n));
    }
    const double d_crit = 1.62762 / std::sqrt(static_cast<double>(n));  // significance 0.01
    SuiteResult out;
    out.name = "mixup-distribution";
    out.pass = d_stat < d_crit;
    out.detail = "KS D " + fmt(d_stat) + " vs critical " + fmt(d_crit);
    return out;
}

SuiteResult verify_metric_correctness() {
    Rng rng(0x6d657472ULL);
    std::string failure;

    for (int t = 0; t < 100 && failure.empty(); ++t) {
        const int k = rng.uniform_int(1, 8);
        KeypointSet gt = random_keypoints(rng, k);
        bool any_visible = false;
        for (double w : gt.weight) any_visible |= w > 0.0;
        if (!any_visible) gt.weight[0] = 1.0;

        // Oracle and far predictions pin the metric's fixed points.
        if (pck(gt.coords, gt, 1.0, 0.05) != 1.0) failure = "oracle prediction below 1";
        std::vector<Vec2> far;
        for (const Vec2& p : gt.coords) far.push_back({p[0] + 10.0, p[1] + 10.0});
        if (pck(far, gt, 1.0, 0.2) != 0.0) failure = "far prediction above 0";

        // Monotone in the threshold.
        std::vector<Vec2> pred;
        for (const Vec2& p : gt.coords)
            pred.push_back({p[0] + rng.normal(0.0, 0.1), p[1] + rng.normal(0.0, 0.1)});
        double prev = -1.0;
        for (double tau : {0.01, 0.05, 0.1, 0.15, 0.2, 0.5, 1.0}) {
            const double v = pck(pred, gt, 1.0, tau);
            if (v < prev) failure = "pck not monotone in tau";
            prev = v;
        }

        // Invariant under a shared permutation of rows.
        std::vector<int> perm(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = k - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        KeypointSet gt_p;
        gt_p.raw_count = k;
        std::vector<Vec2> pred_p;
        for (int i = 0; i < k; ++i) {
            gt_p.coords.push_back(gt.coords[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
            gt_p.weight.push_back(gt.weight[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
            pred_p.push_back(pred[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        }
        if (pck(pred, gt, 1.0, 0.1) != pck(pred_p, gt_p, 1.0, 0.1))
            failure = "pck not permutation invariant";
    }

    // Undefined when nothing is visible.
    KeypointSet blank;
    blank.raw_count = 2;
    blank.coords = {{0.2, 0.2}, {0.8, 0.8}};
    blank.weight = {0.0, 0.0};
    if (failure.empty() && pck(blank.coords, blank, 1.0, 0.2) != kPckUndefined)
        failure = "undefined marker missing";

    // mPCK is the mean over the four thresholds.
    if (failure.empty()) {
        EvalAccumulator acc;
        for (int e = 0; e < 20; ++e) {
            KeypointSet gt = random_keypoints(rng, 6);
            gt.weight.assign(6, 1.0);
            std::vector<Vec2> pred;
            for (const Vec2& p : gt.coords)
                pred.push_back({p[0] + rng.normal(0.0, 0.08), p[1] + rng.normal(0.0, 0.08)});
            acc.add(e % 3, pred, gt, 1.0);
        }
        const EvalReport rep = acc.report();
        double mean = 0.0;
        for (double v : rep.pck_at) mean += v / 4.0;
        if (std::fabs(rep.mpck - mean) > 1e-12) failure = "mpck is not the threshold mean";
    }

    SuiteResult out;
    out.name = "metric-correctness";
    out.pass = failure.empty();
    out.detail = failure.empty() ? "fixed points, monotonicity, permutation, mean" : failure;
    return out;
}

std::vector<SuiteResult> run_verify_suites(const std::string& fault_op) {
    Tape::set_fault_op(fault_op);
    std::vector<SuiteResult> results;
    results.push_back(verify_op_gradients());
    results.push_back(verify_attention_gradients());
    results.push_back(verify_end_to_end_gradient());
    results.push_back(verify_attention_oracle(100));
    results.push_back(verify_padding_properties(1000));
    results.push_back(verify_mixup_distribution());
    results.push_back(verify_metric_correctness());
    Tape::set_fault_op("");
    return results;
}

bool all_pass(const std::vector<SuiteResult>& results) {
    for (const SuiteResult& r : results)
        if (!r.pass) return false;
    return true;
}

}  // namespace posemine
