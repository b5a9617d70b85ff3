// Command-line entry point: training, evaluation, verification suites, and
// static SVG visualization. Exit codes: 0 success, 1 verification/assertion
// failure, 2 usage or configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "posemine/annotations.hpp"
#include "posemine/config.hpp"
#include "posemine/eval.hpp"
#include "posemine/svg_viz.hpp"
#include "posemine/train.hpp"
#include "posemine/verify.hpp"

namespace {

using namespace posemine;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// POSEMINE_OUT_ROOT reroots relative output directories, so harnesses can
// redirect every artifact without editing configs.
std::string resolve_out_dir(const std::string& configured) {
    const char* root = std::getenv("POSEMINE_OUT_ROOT");
    if (root == nullptr || *root == '\0' ||
        std::filesystem::path(configured).is_absolute())
        return configured;
    return std::string(root) + "/" + configured;
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg;
    try {
        cfg = load_run_config(config_path);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    const std::string out_dir = resolve_out_dir(cfg.out_dir);
    try {
        const TrainResult res = train_run(cfg, out_dir);
        std::cout << "trained " << cfg.train_iters << " iterations\n"
                  << "checkpoint: " << res.checkpoint_path << "\n"
                  << "metrics:    " << res.metrics_path << "\n";
        return kExitOk;
    } catch (const TrainAbort& e) {
        std::cerr << e.what() << "\n";
        return kExitFailure;
    }
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, int shots,
             const std::string& ablate, int episodes, uint64_t seed, bool oracle) {
    RunConfig cfg;
    EvalOptions opts;
    PoseModel model;
    try {
        cfg = load_run_config(config_path);
        opts.flag = ablation_from_string(ablate);
        opts.shots = shots;
        opts.episodes = episodes;
        opts.seed = seed;
        opts.oracle_predictor = oracle;
        if (shots < 1) throw ConfigError("eval: shots must be at least 1");
        if (cfg.instances_per_class < shots + 1)
            throw ConfigError("eval: shots " + std::to_string(shots) +
                              " needs more instances per class than configured");
        model = PoseModel::build(cfg.model_config(), cfg.seed);
        load_checkpoint(ckpt_path, model.registry);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    const SyntheticDataset ds = cfg.dataset();
    const EvalReport report = evaluate(model, ds, cfg.novel_split(), opts);
    const std::string json = report.to_json();
    std::cout << json << "\n";

    const std::string out_dir = resolve_out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    const std::string out_path = out_dir + "/eval-" + ablate + "-" + std::to_string(shots) +
                                 "shot" + (oracle ? "-oracle" : "") + ".json";
    std::ofstream out(out_path);
    out << json << "\n";
    std::cout << "report: " << out_path << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& fault_op) {
    if (!fault_op.empty())
        std::cout << "fault injection armed for op '" << fault_op << "'\n";
    const std::vector<SuiteResult> results = run_verify_suites(fault_op);
    for (const SuiteResult& r : results)
        std::printf("%-22s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.detail.c_str());
    if (all_pass(results)) return kExitOk;
    if (!fault_op.empty())
        std::cout << "verification failed with injected fault in op '" << fault_op << "'\n";
    return kExitFailure;
}

int cmd_viz(const std::string& mode, uint64_t seed, const std::string& ckpt_path,
            const std::string& config_path, const std::string& out_path) {
    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_run_config(config_path);
        if (mode != "padding" && ckpt_path.empty())
            throw ConfigError("viz: mode '" + mode + "' requires --ckpt");
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    const SyntheticDataset ds = cfg.dataset();
    Rng rng(hash_mix(seed, 0x76697aULL));
    const EpisodeMode ep_mode = mode == "padding" ? EpisodeMode::kTrain : EpisodeMode::kEval;
    const Episode ep =
        sample_episode(ds, cfg.novel_split(), cfg.shots, cfg.k_total, cfg.alpha, ep_mode, rng);

    std::string svg;
    if (mode == "padding") {
        svg = render_padding_svg(ep);
    } else {
        PoseModel model = PoseModel::build(cfg.model_config(), cfg.seed);
        try {
            load_checkpoint(ckpt_path, model.registry);
        } catch (const std::exception& e) {
            std::cerr << e.what() << "\n";
            return kExitUsage;
        }
        svg = mode == "attention" ? render_attention_svg(model, ep, cfg.layers - 1)
                                  : render_prediction_svg(model, ep);
    }

    const std::string resolved = resolve_out_dir(out_path);
    std::ofstream out(resolved);
    if (!out) {
        std::cerr << "viz: cannot write " << resolved << "\n";
        return kExitUsage;
    }
    out << svg;
    std::cout << "wrote " << resolved << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recurrent structure-aware feature mining for category-agnostic pose estimation"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, ablate = "none", fault_op, mode, out_path;
    int shots = 1, episodes = 200;
    uint64_t seed = 0;
    bool oracle = false;

    CLI::App* train = app.add_subcommand("train", "train on the synthetic base split");
    train->add_option("--config", config_path, "run configuration file")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the novel split");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--config", config_path, "run configuration file")->required();
    eval->add_option("--shots", shots, "supports per episode")->required();
    eval->add_option("--ablate", ablate, "ablation flag");
    eval->add_option("--episodes", episodes, "evaluation episode count");
    eval->add_option("--seed", seed, "evaluation seed");
    eval->add_flag("--oracle", oracle, "score ground truth as the prediction");

    CLI::App* verify = app.add_subcommand("verify", "run gradient/oracle/property suites");
    verify->add_option("--inject-fault", fault_op, "corrupt one op's backward gradient");

    CLI::App* viz = app.add_subcommand("viz", "emit a static SVG");
    viz->add_option("--mode", mode, "padding|attention|prediction")
        ->required()
        ->check(CLI::IsMember({"padding", "attention", "prediction"}));
    viz->add_option("--seed", seed, "episode seed")->required();
    viz->add_option("--ckpt", ckpt_path, "checkpoint (attention/prediction modes)");
    viz->add_option("--config", config_path, "run configuration file (defaults to desk scale)");
    viz->add_option("--out", out_path, "output SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(config_path);
        if (eval->parsed())
            return cmd_eval(ckpt_path, config_path, shots, ablate, episodes, seed, oracle);
        if (verify->parsed()) return cmd_verify(fault_op);
        if (viz->parsed()) return cmd_viz(mode, seed, ckpt_path, config_path, out_path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
