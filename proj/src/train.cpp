#include "posemine/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "posemine/losses.hpp"

namespace posemine {

using nlohmann::json;

namespace {

double tail_mean(const std::vector<double>& v, std::size_t n) {
    if (v.empty()) return 0.0;
    const std::size_t take = std::min(n, v.size());
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(take), v.end(), 0.0) /
           static_cast<double>(take);
}

}  // namespace

TrainResult train_run(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    const SyntheticDataset ds = cfg.dataset();
    const std::vector<int> base = cfg.base_split();
    const std::vector<int> novel = cfg.novel_split();

    TrainResult res;
    res.model = PoseModel::build(cfg.model_config(), cfg.seed);
    res.checkpoint_path = out_dir + "/checkpoint.bin";
    res.metrics_path = out_dir + "/metrics.jsonl";
    res.config_path = out_dir + "/config.json";
    res.manifest_path = out_dir + "/splits.txt";

    std::ofstream metrics(res.metrics_path);
    if (!metrics) throw ContractError("train: cannot write " + res.metrics_path);

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    AdamState adam_state;
    const uint64_t episode_stream = hash_mix(cfg.seed, 0x747261696eULL);

    for (int it = 0; it < cfg.train_iters; ++it) {
        const uint64_t episode_seed = hash_mix(episode_stream, static_cast<uint64_t>(it));
        Rng ep_rng(episode_seed);
        const Episode ep = sample_episode(ds, base, cfg.shots, cfg.k_total, cfg.alpha,
                                          EpisodeMode::kTrain, ep_rng);

        double raw_val = 0.0, mixup_val = 0.0, full_val = 0.0;
        {
            Tape tape;
            const ForwardTrace trace = res.model.run_episode(ep);
            const LossBreakdown loss = loss_full(trace, ep.padded_query_gt, cfg.beta);
            raw_val = loss.raw.scalar_value();
            mixup_val = loss.mixup.scalar_value();
            full_val = loss.full.scalar_value();
            if (!std::isfinite(full_val)) {
                json rec;
                rec["event"] = "abort";
                rec["iter"] = it;
                rec["episode_seed"] = episode_seed;
                metrics << rec.dump() << "\n";
                throw TrainAbort(it, episode_seed);
            }
            tape.backward(loss.full);
        }
        adam_step(res.model.registry, adam_state, adam_cfg);
        res.model.registry.zero_grads();
        res.losses.push_back(full_val);

        if (it % cfg.log_interval == 0 || it + 1 == cfg.train_iters) {
            json rec;
            rec["iter"] = it;
            rec["loss_full"] = full_val;
            rec["loss_raw"] = raw_val;
            rec["loss_mixup"] = mixup_val;
            rec["loss_avg20"] = tail_mean(res.losses, 20);
            metrics << rec.dump() << "\n";
        }
        if (cfg.eval_interval > 0 && (it + 1) % cfg.eval_interval == 0) {
            EvalOptions opts;
            opts.shots = cfg.shots;
            opts.episodes = cfg.eval_episodes;
            opts.seed = hash_mix(cfg.seed, 0x6d696465ULL + static_cast<uint64_t>(it));
            const EvalReport rep = evaluate(res.model, ds, novel, opts);
            json rec;
            rec["iter"] = it;
            rec["novel_mpck"] = rep.mpck;
            rec["novel_episodes"] = rep.episodes;
            metrics << rec.dump() << "\n";
        }
    }

    save_checkpoint(res.checkpoint_path, res.model.registry);
    std::ofstream config_out(res.config_path);
    config_out << cfg.to_json() << "\n";
    std::ofstream manifest(res.manifest_path);
    for (int c : base)
        manifest << "base class " << c << " seed "
                 << hash_mix(cfg.seed, static_cast<uint64_t>(c) + 1) << "\n";
    for (int c : novel)
        manifest << "novel class " << c << " seed "
                 << hash_mix(cfg.seed, static_cast<uint64_t>(c) + 1) << "\n";
    return res;
}

}  // namespace posemine
