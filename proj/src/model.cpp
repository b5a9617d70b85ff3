#include "posemine/model.hpp"

#include <cmath>

namespace posemine {

void ModelConfig::validate() const {
    if (k_total < 1) throw ContractError("config: k_total must be positive");
    if (heads < 1 || layers < 1 || channels < 1 || samples < 1)
        throw ContractError("config: heads, layers, channels, samples must be positive");
    if (channels % heads != 0)
        throw ContractError("config: channels " + std::to_string(channels) +
                            " not divisible by heads " + std::to_string(heads));
    if (sigma_h <= 0.0) throw ContractError("config: sigma_h must be positive");
    if (alpha <= 0.0) throw ContractError("config: alpha must be positive");
    if (beta < 0.0) throw ContractError("config: beta must be non-negative");
    if (pyramid_strides.empty()) throw ContractError("config: pyramid_strides empty");
    if (image_size % pyramid_strides.back() != 0)
        throw ContractError("config: image_size " + std::to_string(image_size) +
                            " not divisible by coarsest stride " +
                            std::to_string(pyramid_strides.back()));
}

Tensor keypoints_tensor(const KeypointSet& pts) {
    Tensor t = Tensor::zeros({pts.size(), 2});
    auto& v = t.mutable_values();
    for (int k = 0; k < pts.size(); ++k) {
        v[static_cast<std::size_t>(2 * k + 0)] = pts.coords[static_cast<std::size_t>(k)][0];
        v[static_cast<std::size_t>(2 * k + 1)] = pts.coords[static_cast<std::size_t>(k)][1];
    }
    return t;
}

PoseModel PoseModel::build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    PoseModel model;
    model.cfg = cfg;
    Rng rng(hash_mix(seed, 0x6d6f64656cULL));

    model.backbone = make_backbone(model.registry, "backbone", cfg.pyramid_strides,
                                   cfg.channels, cfg.backbone_widths, rng);

    const int levels = static_cast<int>(cfg.pyramid_strides.size());
    const int layer_params = cfg.share_layer_weights ? 1 : cfg.layers;
    for (int l = 0; l < layer_params; ++l) {
        const std::string base = "layer" + std::to_string(l);
        RecurrentLayerParams lp;
        lp.miner_s = make_fgsa_miner(model.registry, base + ".miner_s", cfg.channels, cfg.heads,
                                     levels, cfg.samples, rng);
        lp.miner_q = make_fgsa_miner(model.registry, base + ".miner_q", cfg.channels, cfg.heads,
                                     levels, cfg.samples, rng);
        Tensor w1 = Tensor::zeros({cfg.channels, cfg.channels});
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
        for (double& v : w1.mutable_values()) v = rng.normal(0.0, scale);
        lp.mlp_w1 = model.registry.add(base + ".mlp.w1", w1);
        lp.mlp_b1 = model.registry.add(base + ".mlp.b1", Tensor::zeros({cfg.channels}));
        lp.mlp_w2 = model.registry.add(base + ".mlp.w2", Tensor::zeros({cfg.channels, 2}));
        lp.mlp_b2 = model.registry.add(base + ".mlp.b2", Tensor::zeros({2}));
        model.layers.push_back(std::move(lp));
    }
    return model;
}

ForwardTrace PoseModel::forward(const FeaturePyramid& pyr_q,
                                const std::vector<FeaturePyramid>& support_pyrs,
                                const std::vector<KeypointSet>& support_sets,
                                const LinkMatrix& links, const ForwardOptions& opts) const {
    if (support_pyrs.empty()) throw ContractError("forward: empty support list");
    if (support_pyrs.size() != support_sets.size())
        throw ContractError("forward: " + std::to_string(support_pyrs.size()) +
                            " support pyramids vs " + std::to_string(support_sets.size()) +
                            " keypoint sets");
    const int k = cfg.k_total;
    for (const KeypointSet& s : support_sets)
        if (s.size() != k)
            throw ContractError("forward: support keypoints sized " + std::to_string(s.size()) +
                                ", expected " + std::to_string(k));
    if (links.size() != k)
        throw ContractError("forward: link matrix sized " + std::to_string(links.size()) +
                            ", expected " + std::to_string(k));

    std::vector<Tensor> support_pts;
    support_pts.reserve(support_sets.size());
    for (const KeypointSet& s : support_sets) support_pts.push_back(keypoints_tensor(s));

    ForwardTrace trace;
    trace.f_q0 = heatmap_pool(support_pyrs[0], support_sets[0], cfg.sigma_h);
    trace.p_q0 = Tensor::full({k, 2}, 0.5);

    Tensor f_q = trace.f_q0;
    Tensor p_q = trace.p_q0;
    for (int l = 0; l < cfg.layers; ++l) {
        const RecurrentLayerParams& lp = layer(l);
        FgsaDebug* dbg = nullptr;
        if (opts.capture_debug) {
            trace.debug_q.emplace_back();
            dbg = &trace.debug_q.back();
        }

        std::vector<Tensor> mined;
        mined.reserve(support_pyrs.size());
        for (std::size_t n = 0; n < support_pyrs.size(); ++n)
            mined.push_back(fgsa_mine(f_q, support_pyrs[n], support_pts[n], links, lp.miner_s,
                                      opts.identical_refs));
        const Tensor f_s = average(mined);

        f_q = fgsa_mine(f_s, pyr_q, p_q, links, lp.miner_q, opts.identical_refs, dbg);
        const Tensor delta =
            linear(gelu(linear(f_q, lp.mlp_w1, lp.mlp_b1)), lp.mlp_w2, lp.mlp_b2);
        p_q = sigmoid(add(logit(p_q), delta));

        trace.f_s.push_back(f_s);
        trace.f_q.push_back(f_q);
        trace.p_q.push_back(p_q);
    }
    return trace;
}

ForwardTrace PoseModel::run_episode(const Episode& ep, const ForwardOptions& opts) const {
    std::vector<FeaturePyramid> support_pyrs;
    support_pyrs.reserve(ep.supports.size());
    for (const Instance& s : ep.supports) support_pyrs.push_back(extract(s.image));
    return forward(extract(ep.query.image), support_pyrs, ep.padded_supports, ep.padded_links,
                   opts);
}

}  // namespace posemine
