#include "posemine/eval.hpp"

#include <algorithm>

namespace posemine {

namespace {

const std::vector<std::pair<AblationFlag, std::string>>& flag_table() {
    static const std::vector<std::pair<AblationFlag, std::string>> table{
        {AblationFlag::kNone, "none"},
        {AblationFlag::kIdenticalRefs, "identical-reference-points"},
        {AblationFlag::kAllOnesLinks, "all-ones-links"},
        {AblationFlag::kIdentityLinks, "identity-links"},
        {AblationFlag::kMixupTestPad, "mixup-test-padding"},
        {AblationFlag::kZeroTestPad, "zero-test-padding"},
    };
    return table;
}

LinkMatrix all_ones_links(int k) {
    LinkMatrix links(k);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) links.set(i, j, true);
    return links;
}

}  // namespace

AblationFlag ablation_from_string(const std::string& name) {
    for (const auto& [flag, str] : flag_table())
        if (str == name) return flag;
    std::string valid;
    for (const auto& [flag, str] : flag_table()) valid += (valid.empty() ? "" : ", ") + str;
    throw ContractError("unknown ablation flag '" + name + "'; valid flags: " + valid);
}

std::string ablation_to_string(AblationFlag flag) {
    for (const auto& [f, str] : flag_table())
        if (f == flag) return str;
    throw ContractError("unmapped ablation flag");
}

const std::vector<std::string>& ablation_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [flag, str] : flag_table()) out.push_back(str);
        return out;
    }();
    return names;
}

std::vector<Vec2> predictions_from(const ForwardTrace& trace, int count) {
    const Tensor& p = trace.prediction();
    if (count > p.dim(0))
        throw ContractError("predictions_from: " + std::to_string(count) + " rows requested of " +
                            std::to_string(p.dim(0)));
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        out.push_back({p.at(static_cast<std::size_t>(2 * k)), p.at(static_cast<std::size_t>(2 * k + 1))});
    return out;
}

EvalReport evaluate(const PoseModel& model, const SyntheticDataset& ds,
                    const std::vector<int>& split, const EvalOptions& opts) {
    if (opts.episodes < 1) throw ContractError("evaluate: episode count must be positive");
    EvalAccumulator acc;
    for (int e = 0; e < opts.episodes; ++e) {
        // Independent stream per episode: deterministic and order-free.
        Rng ep_rng(hash_mix(hash_mix(opts.seed, 0x6576616cULL), static_cast<uint64_t>(e)));
        const EpisodeMode mode = opts.flag == AblationFlag::kMixupTestPad ? EpisodeMode::kTrain
                                                                          : EpisodeMode::kEval;
        Episode ep = sample_episode(ds, split, opts.shots, model.cfg.k_total, model.cfg.alpha,
                                    mode, ep_rng);

        if (opts.flag == AblationFlag::kZeroTestPad) {
            const LinkMatrix& raw_links = ds.classes[static_cast<std::size_t>(ep.class_id)].links;
            for (std::size_t n = 0; n < ep.supports.size(); ++n)
                ep.padded_supports[n] = zero_pad(ep.supports[n].keypoints, model.cfg.k_total);
            ep.padded_query_gt = zero_pad(ep.query.keypoints, model.cfg.k_total);
            ep.padded_links = expand_links(raw_links, model.cfg.k_total);
            ep.record = PaddingRecord{};
        }

        ForwardOptions fwd;
        fwd.identical_refs = opts.flag == AblationFlag::kIdenticalRefs;

        std::vector<FeaturePyramid> support_pyrs;
        support_pyrs.reserve(ep.supports.size());
        for (const Instance& s : ep.supports) support_pyrs.push_back(model.extract(s.image));

        LinkMatrix links = ep.padded_links;
        if (opts.flag == AblationFlag::kAllOnesLinks) links = all_ones_links(model.cfg.k_total);
        if (opts.flag == AblationFlag::kIdentityLinks) links = LinkMatrix(model.cfg.k_total);

        const ForwardTrace trace = model.forward(model.extract(ep.query.image), support_pyrs,
                                                 ep.padded_supports, links, fwd);

        std::vector<Vec2> pred;
        if (opts.oracle_predictor) {
            pred = ep.query.keypoints.coords;
        } else {
            pred = predictions_from(trace, ep.raw_count);
        }
        acc.add(ep.class_id, pred, ep.query.keypoints, 1.0);
    }
    return acc.report();
}

}  // namespace posemine
