#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "posemine/eval.hpp"
#include "posemine/losses.hpp"
#include "posemine/metrics.hpp"
#include "posemine/train.hpp"

using namespace posemine;

namespace {

Tensor randn_t(Shape shape, Rng& rng, double stddev) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal() * stddev;
    return Tensor::from(std::move(v), std::move(shape));
}

// Builds a trace holding only per-layer predictions, which is all the losses
// read.
ForwardTrace trace_of(std::vector<Tensor> p_q) {
    ForwardTrace tr;
    tr.p_q = std::move(p_q);
    return tr;
}

KeypointSet gt_of(std::vector<Vec2> coords, std::vector<double> weight, int raw_count) {
    KeypointSet s;
    s.coords = std::move(coords);
    s.weight = std::move(weight);
    s.raw_count = raw_count;
    return s;
}

double scalar_of(const Tensor& t) { return t.values()[0]; }

RunConfig micro_run_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.k_total = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.channels = 16;
    cfg.samples = 2;
    cfg.image_size = 32;
    cfg.pyramid_strides = {4, 8};
    cfg.base_classes = 3;
    cfg.novel_classes = 2;
    cfg.instances_per_class = 8;
    cfg.min_keypoints = 5;
    cfg.max_keypoints = 7;
    cfg.train_iters = 60;
    cfg.lr = 1e-3;
    cfg.log_interval = 10;
    cfg.eval_interval = 0;
    cfg.eval_episodes = 4;
    cfg.shots = 1;
    cfg.out_dir = out_dir;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("a perfect prediction has zero loss") {
    const KeypointSet gt = gt_of({{0.2, 0.3}, {0.6, 0.7}}, {1.0, 1.0}, 2);
    const ForwardTrace tr = trace_of({keypoints_tensor(gt), keypoints_tensor(gt)});
    CHECK(scalar_of(loss_raw(tr, gt)) == 0.0);
    CHECK(scalar_of(loss_mixup(tr, gt)) == 0.0);
    CHECK(scalar_of(loss_full(tr, gt, 0.5).full) == 0.0);
}

TEST_CASE("a single keypoint offset by (0.1, 0.2) costs 0.3") {
    const KeypointSet gt = gt_of({{0.4, 0.4}}, {1.0}, 1);
    const Tensor pred = Tensor::from({0.5, 0.6}, {1, 2});
    const ForwardTrace tr = trace_of({pred});
    CHECK(scalar_of(loss_raw(tr, gt)) == doctest::Approx(0.3).epsilon(1e-12));
    // No padded rows: the mixup term vanishes when K equals the raw count.
    CHECK(scalar_of(loss_mixup(tr, gt)) == 0.0);
}

TEST_CASE("weight-zero keypoints contribute nothing") {
    const KeypointSet gt = gt_of({{0.4, 0.4}, {0.9, 0.9}}, {1.0, 0.0}, 2);
    const Tensor pred = Tensor::from({0.5, 0.6, 0.1, 0.1}, {2, 2});
    const ForwardTrace tr = trace_of({pred});
    CHECK(scalar_of(loss_raw(tr, gt)) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("losses average over layers") {
    const KeypointSet gt = gt_of({{0.4, 0.4}}, {1.0}, 1);
    const Tensor p1 = Tensor::from({0.5, 0.6}, {1, 2});  // cost 0.3
    const Tensor p2 = Tensor::from({0.4, 0.5}, {1, 2});  // cost 0.1
    const ForwardTrace tr = trace_of({p1, p2});
    const LossBreakdown lb = loss_full(tr, gt, 0.5);
    CHECK(scalar_of(lb.raw) == doctest::Approx(0.2).epsilon(1e-12));
    REQUIRE(lb.per_layer_raw.size() == 2);
    CHECK(lb.per_layer_raw[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(lb.per_layer_raw[1] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("swapping the raw and padded index ranges swaps the two losses") {
    const std::vector<Vec2> pv{{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}, {0.7, 0.8}};
    const KeypointSet gt =
        gt_of({{0.15, 0.2}, {0.3, 0.5}, {0.45, 0.6}, {0.9, 0.8}}, {1.0, 0.5, 1.0, 1.0}, 2);
    Tensor pred = Tensor::from({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}, {4, 2});
    const ForwardTrace tr = trace_of({pred});

    const KeypointSet gt2 =
        gt_of({gt.coords[2], gt.coords[3], gt.coords[0], gt.coords[1]},
              {gt.weight[2], gt.weight[3], gt.weight[0], gt.weight[1]}, 2);
    Tensor pred2 = Tensor::from({0.5, 0.6, 0.7, 0.8, 0.1, 0.2, 0.3, 0.4}, {4, 2});
    const ForwardTrace tr2 = trace_of({pred2});

    CHECK(scalar_of(loss_raw(tr2, gt2)) == doctest::Approx(scalar_of(loss_mixup(tr, gt))).epsilon(1e-12));
    CHECK(scalar_of(loss_mixup(tr2, gt2)) == doctest::Approx(scalar_of(loss_raw(tr, gt))).epsilon(1e-12));
}

TEST_CASE("the full loss composes its parts with the padded weight") {
    // One layer, two raw keypoints costing 0.4 total, one padded costing 0.2.
    const KeypointSet gt = gt_of({{0.3, 0.3}, {0.6, 0.6}, {0.45, 0.45}}, {1.0, 1.0, 1.0}, 2);
    const Tensor pred = Tensor::from({0.4, 0.4, 0.7, 0.7, 0.55, 0.55}, {3, 2});
    const ForwardTrace tr = trace_of({pred});
    const LossBreakdown lb = loss_full(tr, gt, 0.5);
    CHECK(scalar_of(lb.raw) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(scalar_of(lb.mixup) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(scalar_of(lb.full) == doctest::Approx(0.5).epsilon(1e-12));

    const LossBreakdown lb0 = loss_full(tr, gt, 0.0);
    CHECK(scalar_of(lb0.full) == scalar_of(lb0.raw));

    CHECK_THROWS_AS((void)loss_full(tr, gt, -0.1), ContractError);
}

TEST_CASE("losses match a direct summation oracle on random traces") {
    Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = rng.uniform_int(2, 7);
        const int raw = rng.uniform_int(1, k);
        const int layers = rng.uniform_int(1, 3);
        KeypointSet gt;
        gt.raw_count = raw;
        for (int i = 0; i < k; ++i) {
            gt.coords.push_back({rng.uniform(), rng.uniform()});
            const int w = rng.uniform_int(0, 2);
            gt.weight.push_back(w == 0 ? 0.0 : (w == 1 ? 0.5 : 1.0));
        }
        std::vector<Tensor> preds;
        for (int l = 0; l < layers; ++l) preds.push_back(randn_t({k, 2}, rng, 0.3));
        const ForwardTrace tr = trace_of(preds);

        double want_raw = 0.0, want_mix = 0.0;
        for (int l = 0; l < layers; ++l) {
            for (int i = 0; i < k; ++i) {
                const double ex =
                    std::abs(preds[static_cast<std::size_t>(l)].values()[static_cast<std::size_t>(2 * i)] -
                             gt.coords[static_cast<std::size_t>(i)][0]) +
                    std::abs(preds[static_cast<std::size_t>(l)].values()[static_cast<std::size_t>(2 * i + 1)] -
                             gt.coords[static_cast<std::size_t>(i)][1]);
                const double term = gt.weight[static_cast<std::size_t>(i)] * ex;
                (i < raw ? want_raw : want_mix) += term;
            }
        }
        want_raw /= layers;
        want_mix /= layers;
        const LossBreakdown lb = loss_full(tr, gt, 0.7);
        CHECK(std::abs(scalar_of(lb.raw) - want_raw) < 1e-12);
        CHECK(std::abs(scalar_of(lb.mixup) - want_mix) < 1e-12);
        CHECK(std::abs(scalar_of(lb.full) - (want_raw + 0.7 * want_mix)) < 1e-12);
    }
}

TEST_CASE("pck counts visible keypoints within the scaled threshold") {
    const KeypointSet gt = gt_of({{0.5, 0.5}, {0.2, 0.2}, {0.8, 0.8}}, {1.0, 1.0, 0.0}, 3);
    // Errors: 0 and 0.06; the third keypoint is invisible and ignored.
    const std::vector<Vec2> pred{{0.5, 0.5}, {0.26, 0.2}, {0.0, 0.0}};
    CHECK(pck(pred, gt, 1.0, 0.05) == doctest::Approx(0.5));
    CHECK(pck(pred, gt, 1.0, 0.1) == doctest::Approx(1.0));
    // Scale stretches the acceptance radius.
    CHECK(pck(pred, gt, 2.0, 0.05) == doctest::Approx(1.0));

    const KeypointSet blind = gt_of({{0.5, 0.5}}, {0.0}, 1);
    CHECK(pck({{0.5, 0.5}}, blind, 1.0, 0.1) == kPckUndefined);

    CHECK_THROWS_AS((void)pck({{0.1, 0.1}}, gt, 1.0, 0.1), ContractError);  // too few predictions
    CHECK_THROWS_AS((void)pck(pred, gt, 0.0, 0.1), ContractError);
}

TEST_CASE("pck is monotone in the threshold") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = rng.uniform_int(1, 8);
        KeypointSet gt;
        gt.raw_count = k;
        std::vector<Vec2> pred;
        for (int i = 0; i < k; ++i) {
            gt.coords.push_back({rng.uniform(), rng.uniform()});
            gt.weight.push_back(rng.uniform() < 0.2 ? 0.0 : 1.0);
            pred.push_back({rng.uniform(), rng.uniform()});
        }
        bool any = false;
        for (double w : gt.weight) any = any || w > 0.0;
        if (!any) continue;
        double prev = 0.0;
        for (double tau : kPckThresholds) {
            const double v = pck(pred, gt, 1.0, tau);
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("the accumulator pools counts within a class and averages across classes") {
    EvalAccumulator acc;
    // Class 0: one episode with 1/1 correct, one with 0/3 -> pooled 1/4.
    const KeypointSet one = gt_of({{0.5, 0.5}}, {1.0}, 1);
    acc.add(0, {{0.5, 0.5}}, one, 1.0);
    const KeypointSet three = gt_of({{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}}, {1.0, 1.0, 1.0}, 3);
    acc.add(0, {{0.9, 0.9}, {0.9, 0.9}, {0.9, 0.9}}, three, 1.0);
    // Class 1: always perfect.
    acc.add(1, {{0.5, 0.5}}, one, 1.0);

    const EvalReport rep = acc.report();
    CHECK(rep.episodes == 3);
    REQUIRE(rep.per_class.size() == 2);
    for (double v : rep.per_class.at(0).pck_at) CHECK(v == doctest::Approx(0.25));
    for (double v : rep.per_class.at(1).pck_at) CHECK(v == doctest::Approx(1.0));
    // Classes weigh equally regardless of keypoint counts.
    for (double v : rep.pck_at) CHECK(v == doctest::Approx(0.625));
    CHECK(rep.mpck == doctest::Approx(0.625));

    // The JSON view is stable and carries the same numbers.
    const std::string j1 = rep.to_json();
    const std::string j2 = acc.report().to_json();
    CHECK(j1 == j2);
    const auto parsed = nlohmann::json::parse(j1);
    CHECK(parsed.at("mpck").get<double>() == doctest::Approx(0.625));
    CHECK(parsed.at("episodes").get<int>() == 3);
}

TEST_CASE("ablation flags parse by name and reject unknown values") {
    REQUIRE(ablation_names().size() == 6);
    for (const std::string& name : ablation_names())
        CHECK(ablation_to_string(ablation_from_string(name)) == name);
    CHECK(ablation_from_string("none") == AblationFlag::kNone);
    CHECK(ablation_from_string("identity-links") == AblationFlag::kIdentityLinks);
    CHECK_THROWS_WITH_AS(ablation_from_string("garbage"),
                         doctest::Contains("identical-reference-points"), ContractError);
}

TEST_CASE("training reduces the loss and writes a reproducible run directory") {
    const std::string dir_a = "tte_run_a";
    const std::string dir_b = "tte_run_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    RunConfig cfg = micro_run_config(dir_a);
    const TrainResult res = train_run(cfg, dir_a);

    REQUIRE(static_cast<int>(res.losses.size()) == cfg.train_iters);
    const auto head = std::accumulate(res.losses.begin(), res.losses.begin() + 15, 0.0) / 15.0;
    const auto tail = std::accumulate(res.losses.end() - 15, res.losses.end(), 0.0) / 15.0;
    CHECK(tail < head);

    CHECK(std::filesystem::exists(res.checkpoint_path));
    CHECK(std::filesystem::exists(res.metrics_path));
    CHECK(std::filesystem::exists(res.config_path));
    CHECK(std::filesystem::exists(res.manifest_path));

    // Every metrics line is one JSON record keyed by iteration; records land
    // on the log grid plus the final iteration.
    std::ifstream metrics(res.metrics_path);
    std::string line;
    int records = 0;
    while (std::getline(metrics, line)) {
        const auto rec = nlohmann::json::parse(line);
        CHECK(rec.contains("iter"));
        ++records;
    }
    int expected = 0;
    for (int it = 0; it < cfg.train_iters; ++it)
        if (it % cfg.log_interval == 0 || it == cfg.train_iters - 1) ++expected;
    CHECK(records == expected);

    // Same seed, second directory: byte-identical log and checkpoint.
    cfg.out_dir = dir_b;
    const TrainResult res2 = train_run(cfg, dir_b);
    CHECK(slurp(res.metrics_path) == slurp(res2.metrics_path));
    CHECK(slurp(res.checkpoint_path) == slurp(res2.checkpoint_path));

    // The checkpoint loads into a freshly built model of the same geometry.
    PoseModel fresh = PoseModel::build(cfg.model_config(), 999);
    load_checkpoint(res.checkpoint_path, fresh.registry);
    CHECK(fresh.registry.flatten() == res.model.registry.flatten());

    // Geometry mismatches are rejected by name/shape checking.
    ModelConfig other = cfg.model_config();
    other.channels = 8;
    other.backbone_widths.clear();
    PoseModel wrong = PoseModel::build(other, 1);
    CHECK_THROWS_AS(load_checkpoint(res.checkpoint_path, wrong.registry), std::runtime_error);
}

TEST_CASE("a zero learning rate leaves parameters at their initialization") {
    const std::string dir = "tte_lr0";
    std::filesystem::remove_all(dir);
    RunConfig cfg = micro_run_config(dir);
    cfg.train_iters = 3;
    cfg.lr = 0.0;
    const TrainResult res = train_run(cfg, dir);
    const PoseModel fresh = PoseModel::build(cfg.model_config(), cfg.seed);
    CHECK(res.model.registry.flatten() == fresh.registry.flatten());
}

TEST_CASE("non-finite losses abort with the episode seed") {
    const std::string dir = "tte_blowup";
    std::filesystem::remove_all(dir);
    RunConfig cfg = micro_run_config(dir);
    cfg.train_iters = 10;
    cfg.lr = 1e308;  // guaranteed overflow on the first update
    CHECK_THROWS_AS((void)train_run(cfg, dir), TrainAbort);
    // The abort is also recorded in the metrics log.
    bool aborted = false;
    std::ifstream metrics(dir + "/metrics.jsonl");
    std::string line;
    while (std::getline(metrics, line))
        if (line.find("abort") != std::string::npos) aborted = true;
    CHECK(aborted);
}

TEST_CASE("evaluation is pure, seeded and bounded") {
    RunConfig cfg = micro_run_config("unused");
    const SyntheticDataset ds = cfg.dataset();
    PoseModel model = PoseModel::build(cfg.model_config(), 3);

    EvalOptions opts;
    opts.shots = 1;
    opts.episodes = 12;
    opts.seed = 5;
    const EvalReport a = evaluate(model, ds, cfg.novel_split(), opts);
    const EvalReport b = evaluate(model, ds, cfg.novel_split(), opts);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.episodes == 12);
    for (double v : a.pck_at) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // Per-class ids come from the evaluated split.
    for (const auto& [cid, scores] : a.per_class) {
        CHECK(cid >= cfg.base_classes);
        CHECK(cid < cfg.base_classes + cfg.novel_classes);
        CHECK(scores.episodes > 0);
    }

    // A different seed samples different episodes.
    opts.seed = 6;
    const EvalReport c = evaluate(model, ds, cfg.novel_split(), opts);
    CHECK(a.to_json() != c.to_json());
}

TEST_CASE("the oracle predictor pins every metric at one") {
    RunConfig cfg = micro_run_config("unused");
    const SyntheticDataset ds = cfg.dataset();
    PoseModel model = PoseModel::build(cfg.model_config(), 3);
    EvalOptions opts;
    opts.episodes = 8;
    opts.oracle_predictor = true;
    const EvalReport rep = evaluate(model, ds, cfg.novel_split(), opts);
    for (double v : rep.pck_at) CHECK(v == 1.0);
    CHECK(rep.mpck == 1.0);
}

TEST_CASE("every ablation flag evaluates cleanly") {
    RunConfig cfg = micro_run_config("unused");
    cfg.instances_per_class = 6;
    const SyntheticDataset ds = cfg.dataset();
    PoseModel model = PoseModel::build(cfg.model_config(), 3);
    for (const std::string& name : ablation_names()) {
        EvalOptions opts;
        opts.episodes = 4;
        opts.flag = ablation_from_string(name);
        const EvalReport rep = evaluate(model, ds, cfg.novel_split(), opts);
        CHECK(rep.episodes == 4);
        for (double v : rep.pck_at) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}
