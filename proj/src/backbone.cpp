#include "posemine/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace posemine {

namespace {

bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }

Tensor conv_init(Rng& rng, int kh, int kw, int cin, int cout) {
    Tensor w = Tensor::zeros({kh, kw, cin, cout});
    const double scale = 1.0 / std::sqrt(static_cast<double>(kh * kw * cin));
    for (double& v : w.mutable_values()) v = rng.normal(0.0, scale);
    return w;
}

}  // namespace

BackboneParams make_backbone(ParamRegistry& reg, const std::string& prefix,
                             const std::vector<int>& strides, int channels,
                             const std::vector<int>& widths, Rng& rng) {
    if (strides.empty()) throw ContractError("make_backbone: no pyramid strides");
    for (std::size_t i = 0; i < strides.size(); ++i) {
        if (!is_pow2(strides[i]))
            throw ContractError("make_backbone: stride " + std::to_string(strides[i]) +
                                " is not a power of two");
        if (i > 0 && strides[i] <= strides[i - 1])
            throw ContractError("make_backbone: strides must be ascending");
    }

    BackboneParams p;
    p.strides = strides;
    p.channels = channels;
    const int stages = static_cast<int>(std::lround(std::log2(strides.back())));
    if (!widths.empty() && static_cast<int>(widths.size()) != stages)
        throw ContractError("make_backbone: expected " + std::to_string(stages) +
                            " stage widths, got " + std::to_string(widths.size()));

    int cin = 3;
    std::size_t next_level = 0;
    for (int s = 0; s < stages; ++s) {
        const int cout = widths.empty() ? std::min(channels, 8 << s)
                                        : widths[static_cast<std::size_t>(s)];
        const std::string base = prefix + ".stage" + std::to_string(s);
        p.stage_w.push_back(reg.add(base + ".w", conv_init(rng, 3, 3, cin, cout)));
        p.stage_b.push_back(reg.add(base + ".b", Tensor::zeros({cout})));
        if (next_level < strides.size() && (1 << (s + 1)) == strides[next_level]) {
            const std::string tap = prefix + ".tap" + std::to_string(next_level);
            p.tap_w.push_back(reg.add(tap + ".w", conv_init(rng, 1, 1, cout, channels)));
            p.tap_b.push_back(reg.add(tap + ".b", Tensor::zeros({channels})));
            p.tap_stage.push_back(s);
            ++next_level;
        }
        cin = cout;
    }
    if (next_level != strides.size())
        throw ContractError("make_backbone: strides do not align with stage doubling");
    return p;
}

FeaturePyramid backbone_forward(const Tensor& image, const BackboneParams& p) {
    if (image.ndim() != 3 || image.dim(2) != 3)
        throw ContractError("backbone_forward: image must be {H, W, 3}, got " +
                            shape_str(image.shape()));
    const int coarsest = p.strides.back();
    if (image.dim(0) % coarsest != 0 || image.dim(1) % coarsest != 0)
        throw ContractError("backbone_forward: image " + shape_str(image.shape()) +
                            " not divisible by coarsest stride " + std::to_string(coarsest));

    FeaturePyramid pyr;
    Tensor x = image;
    std::size_t tap = 0;
    for (int s = 0; s < p.stage_count(); ++s) {
        x = gelu(conv2d(x, p.stage_w[static_cast<std::size_t>(s)],
                        p.stage_b[static_cast<std::size_t>(s)], 2));
        while (tap < p.tap_w.size() && p.tap_stage[tap] == s) {
            pyr.levels.push_back(conv2d(x, p.tap_w[tap], p.tap_b[tap], 1));
            ++tap;
        }
    }
    pyr.validate();
    return pyr;
}

}  // namespace posemine
