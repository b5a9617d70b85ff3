#include "posemine/deform_attn.hpp"

#include <cmath>
#include <numbers>

namespace posemine {

void FeaturePyramid::validate() const {
    if (levels.empty()) throw ContractError("FeaturePyramid: no levels");
    const int d = levels[0].dim(2);
    for (std::size_t l = 0; l < levels.size(); ++l) {
        if (levels[l].ndim() != 3)
            throw ContractError("FeaturePyramid: level " + std::to_string(l) + " is not H x W x D");
        if (levels[l].dim(2) != d)
            throw ContractError("FeaturePyramid: level " + std::to_string(l) +
                                " channel count differs");
        if (l > 0 && (levels[l].dim(0) > levels[l - 1].dim(0) ||
                      levels[l].dim(1) > levels[l - 1].dim(1)))
            throw ContractError("FeaturePyramid: resolutions must not increase with level");
    }
}

// ---- bilinear sampling -------------------------------------------------------

namespace {

struct Corner {
    int u, v;
    double w;       // bilinear weight
    double dw_dx;   // d(weight)/d(pixel-space x)
    double dw_dy;
};

// The four interpolation corners around pixel-space location (x, y).
std::array<Corner, 4> corners_at(double x, double y) {
    const double x0 = std::floor(x), y0 = std::floor(y);
    const double dx = x - x0, dy = y - y0;
    const int u0 = static_cast<int>(x0), v0 = static_cast<int>(y0);
    return {Corner{u0, v0, (1 - dx) * (1 - dy), -(1 - dy), -(1 - dx)},
            Corner{u0 + 1, v0, dx * (1 - dy), (1 - dy), -dx},
            Corner{u0, v0 + 1, (1 - dx) * dy, -dy, (1 - dx)},
            Corner{u0 + 1, v0 + 1, dx * dy, dy, dx}};
}

}  // namespace

Tensor bilinear_sample_multi(const FeaturePyramid& pyr, const Tensor& locs,
                             const std::vector<int>& level_of_row) {
    pyr.validate();
    if (locs.ndim() != 2 || locs.dim(1) != 2)
        throw ContractError("bilinear_sample_multi: locations must be {n,2}, got " +
                            shape_str(locs.shape()));
    const int n = locs.dim(0);
    if (static_cast<int>(level_of_row.size()) != n)
        throw ContractError("bilinear_sample_multi: level_of_row size mismatch");
    const int d = pyr.channels();
    for (int lv : level_of_row)
        if (lv < 0 || lv >= static_cast<int>(pyr.levels.size()))
            throw ContractError("bilinear_sample_multi: level index out of range");

    Tensor out = Tensor::zeros({n, d});
    auto& ov = out.mutable_values();
    for (int r = 0; r < n; ++r) {
        const Tensor& map = pyr.levels[static_cast<std::size_t>(level_of_row[static_cast<std::size_t>(r)])];
        const int h = map.dim(0), w = map.dim(1);
        const double x = locs.at(static_cast<std::size_t>(r * 2)) * w - 0.5;
        const double y = locs.at(static_cast<std::size_t>(r * 2 + 1)) * h - 0.5;
        for (const Corner& c : corners_at(x, y)) {
            if (c.u < 0 || c.u >= w || c.v < 0 || c.v >= h) continue;  // zero-padded border
            const double* feat = map.values().data() + (c.v * w + c.u) * d;
            for (int ch = 0; ch < d; ++ch)
                ov[static_cast<std::size_t>(r * d + ch)] += c.w * feat[ch];
        }
    }

    bool trace = Tape::active() && locs.requires_grad();
    if (Tape::active() && !trace)
        for (const Tensor& lv : pyr.levels)
            if (lv.requires_grad()) { trace = true; break; }
    if (trace) {
        out.set_requires_grad(true);
        auto ld = locs.node();
        auto od = out.node();
        std::vector<std::shared_ptr<TensorData>> maps;
        maps.reserve(pyr.levels.size());
        for (const Tensor& lv : pyr.levels) maps.push_back(lv.node());
        Tape::active()->record("bilinear", od, [ld, od, maps, level_of_row, n, d]() {
            for (int r = 0; r < n; ++r) {
                auto& map = *maps[static_cast<std::size_t>(level_of_row[static_cast<std::size_t>(r)])];
                const int h = map.shape[0], w = map.shape[1];
                const double x = ld->values[static_cast<std::size_t>(r * 2)] * w - 0.5;
                const double y = ld->values[static_cast<std::size_t>(r * 2 + 1)] * h - 0.5;
                double gx = 0.0, gy = 0.0;
                for (const Corner& c : corners_at(x, y)) {
                    if (c.u < 0 || c.u >= w || c.v < 0 || c.v >= h) continue;
                    const std::size_t base = static_cast<std::size_t>((c.v * w + c.u) * d);
                    for (int ch = 0; ch < d; ++ch) {
                        const double g = od->grad[static_cast<std::size_t>(r * d + ch)];
                        if (map.requires_grad) {
                            if (map.grad.empty()) map.grad.assign(map.values.size(), 0.0);
                            map.grad[base + static_cast<std::size_t>(ch)] += g * c.w;
                        }
                        const double feat = map.values[base + static_cast<std::size_t>(ch)];
                        gx += g * c.dw_dx * feat;
                        gy += g * c.dw_dy * feat;
                    }
                }
                if (ld->requires_grad) {
                    if (ld->grad.empty()) ld->grad.assign(ld->values.size(), 0.0);
                    ld->grad[static_cast<std::size_t>(r * 2)] += gx * w;
                    ld->grad[static_cast<std::size_t>(r * 2 + 1)] += gy * h;
                }
            }
        });
    }
    return out;
}

Tensor bilinear_sample(const Tensor& map, const Tensor& p) {
    if (p.ndim() != 1 || p.dim(0) != 2)
        throw ContractError("bilinear_sample: location must be {2}, got " + shape_str(p.shape()));
    FeaturePyramid single;
    single.levels.push_back(map);
    Tensor locs = reshape(p, {1, 2});
    return reshape(bilinear_sample_multi(single, locs, {0}), {map.dim(2)});
}

Tensor bilinear_sample(const Tensor& map, Vec2 p) {
    return bilinear_sample(map, Tensor::from({p[0], p[1]}, {2}));
}

// ---- attention head ------------------------------------------------------------

Tensor att_head(const Tensor& f, const FeaturePyramid& pyr, const Tensor& p,
                const AttentionHeadParams& hp, FgsaDebug::HeadTrace* trace) {
    if (hp.levels != static_cast<int>(pyr.levels.size()))
        throw ContractError("att_head: params built for " + std::to_string(hp.levels) +
                            " levels, pyramid has " + std::to_string(pyr.levels.size()));
    const int n = hp.levels * hp.s;

    // Per-level offset scale (1/W, 1/H): predicted offsets are in pixels of
    // their level, locations stay normalized.
    Tensor scale = Tensor::zeros({n, 2});
    std::vector<int> level_of_row(static_cast<std::size_t>(n));
    {
        auto& sv = scale.mutable_values();
        int r = 0;
        for (int l = 0; l < hp.levels; ++l) {
            const Tensor& map = pyr.levels[static_cast<std::size_t>(l)];
            for (int s = 0; s < hp.s; ++s, ++r) {
                sv[static_cast<std::size_t>(r * 2)] = 1.0 / map.dim(1);
                sv[static_cast<std::size_t>(r * 2 + 1)] = 1.0 / map.dim(0);
                level_of_row[static_cast<std::size_t>(r)] = l;
            }
        }
    }

    Tensor offsets = reshape(linear(f, hp.offset_w, hp.offset_b), {n, 2});
    Tensor locs = add_rowvec(mul(offsets, scale), p);
    Tensor samples = bilinear_sample_multi(pyr, locs, level_of_row);
    Tensor values = linear(samples, hp.value_w, hp.value_b);
    Tensor weights = softmax_last(linear(f, hp.weight_w, hp.weight_b));

    if (trace) {
        trace->ref_point = {p.at(0), p.at(1)};
        trace->sample_locs.clear();
        trace->weights.clear();
        for (int r = 0; r < n; ++r) {
            trace->sample_locs.push_back(
                {locs.at(static_cast<std::size_t>(r * 2)), locs.at(static_cast<std::size_t>(r * 2 + 1))});
            trace->weights.push_back(weights.at(static_cast<std::size_t>(r)));
        }
    }
    return weighted_sum_rows(values, weights);
}

Tensor att_head(const Tensor& f, const FeaturePyramid& pyr, Vec2 p,
                const AttentionHeadParams& hp, FgsaDebug::HeadTrace* trace) {
    return att_head(f, pyr, Tensor::from({p[0], p[1]}, {2}), hp, trace);
}

// ---- FGSA miner ------------------------------------------------------------------

Tensor fgsa_mine(const Tensor& F, const FeaturePyramid& pyr, const Tensor& P,
                 const LinkMatrix& links, const FgsaMinerParams& params, bool identical_refs,
                 FgsaDebug* debug) {
    if (F.ndim() != 2 || P.ndim() != 2 || P.dim(1) != 2 || F.dim(0) != P.dim(0))
        throw_shape_error("fgsa_mine", F.shape(), P.shape());
    const int k_count = F.dim(0);
    const int d = F.dim(1);
    const int m_heads = params.head_count();
    if (links.size() != k_count)
        throw ContractError("fgsa_mine: " + std::to_string(k_count) + " keypoints vs " +
                            std::to_string(links.size()) + "-sized links");
    if (m_heads < 1 || d % m_heads != 0)
        throw ContractError("fgsa_mine: channel count " + std::to_string(d) +
                            " not divisible by " + std::to_string(m_heads) + " heads");

    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        const std::vector<int> refs = identical_refs
                                          ? std::vector<int>(static_cast<std::size_t>(m_heads), k)
                                          : bfs_reference_indices(links, k, m_heads);
        if (debug) debug->ref_indices.push_back(refs);
        Tensor fk = reshape(gather_rows(F, {k}), {d});
        Tensor acc = fk;
        for (int m = 0; m < m_heads; ++m) {
            Tensor pm = reshape(gather_rows(P, {refs[static_cast<std::size_t>(m)]}), {2});
            FgsaDebug::HeadTrace* tr = nullptr;
            if (debug) {
                debug->heads.emplace_back();
                tr = &debug->heads.back();
                tr->keypoint = k;
                tr->head = m;
                tr->ref_index = refs[static_cast<std::size_t>(m)];
            }
            Tensor head = att_head(fk, pyr, pm, params.heads[static_cast<std::size_t>(m)], tr);
            acc = add(acc, linear(head, params.heads[static_cast<std::size_t>(m)].out_w, Tensor{}));
        }
        rows.push_back(acc);
    }
    Tensor mined = stack_rows(rows);

    // Pre-norm feed-forward residual: identity when ffn_w2/ffn_b2 are zero.
    Tensor normed = layer_norm(mined, params.ln_gamma, params.ln_beta);
    Tensor hidden = gelu(linear(normed, params.ffn_w1, params.ffn_b1));
    return add(mined, linear(hidden, params.ffn_w2, params.ffn_b2));
}

// ---- heatmap pooling ----------------------------------------------------------------

Tensor heatmap_pool(const FeaturePyramid& pyr, const KeypointSet& pts, double sigma_h) {
    pyr.validate();
    if (sigma_h <= 0.0) throw ContractError("heatmap_pool: sigma_h must be positive");
    const Tensor& map = pyr.levels[0];  // finest level
    const int h = map.dim(0), w = map.dim(1), d = map.dim(2);
    const int k_count = pts.size();

    // Normalized Gaussian weights per keypoint, reused by the backward pass.
    std::vector<std::vector<double>> gk(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        if (pts.weight[static_cast<std::size_t>(k)] <= 0.0) continue;
        auto& wk = gk[static_cast<std::size_t>(k)];
        wk.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0);
        const Vec2 c = pts.coords[static_cast<std::size_t>(k)];
        double z = 0.0;
        for (int v = 0; v < h; ++v) {
            for (int u = 0; u < w; ++u) {
                const double cx = (u + 0.5) / w, cy = (v + 0.5) / h;
                const double d2 = (cx - c[0]) * (cx - c[0]) + (cy - c[1]) * (cy - c[1]);
                const double g = std::exp(-d2 / (2.0 * sigma_h * sigma_h));
                wk[static_cast<std::size_t>(v * w + u)] = g;
                z += g;
            }
        }
        if (z <= 0.0) {
            wk.clear();  // all mass underflowed; treat as invisible
            continue;
        }
        for (double& g : wk) g /= z;
    }

    Tensor out = Tensor::zeros({k_count, d});
    auto& ov = out.mutable_values();
    for (int k = 0; k < k_count; ++k) {
        const auto& wk = gk[static_cast<std::size_t>(k)];
        if (wk.empty()) continue;
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) {
                const double g = wk[static_cast<std::size_t>(v * w + u)];
                const double* feat = map.values().data() + (v * w + u) * d;
                for (int ch = 0; ch < d; ++ch)
                    ov[static_cast<std::size_t>(k * d + ch)] += g * feat[ch];
            }
    }

    if (tracing({&map})) {
        out.set_requires_grad(true);
        auto md = map.node(), od = out.node();
        Tape::active()->record("heatmap_pool", od, [md, od, gk, k_count, h, w, d]() {
            if (md->grad.empty()) md->grad.assign(md->values.size(), 0.0);
            for (int k = 0; k < k_count; ++k) {
                const auto& wk = gk[static_cast<std::size_t>(k)];
                if (wk.empty()) continue;
                for (int px = 0; px < h * w; ++px) {
                    const double g = wk[static_cast<std::size_t>(px)];
                    for (int ch = 0; ch < d; ++ch)
                        md->grad[static_cast<std::size_t>(px * d + ch)] +=
                            g * od->grad[static_cast<std::size_t>(k * d + ch)];
                }
            }
        });
    }
    return out;
}

// ---- parameter construction -----------------------------------------------------------

namespace {

Tensor random_init(Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

AttentionHeadParams make_att_head(ParamRegistry& reg, const std::string& prefix, int d,
                                  int m_heads, int head_index, int levels, int s, Rng& rng) {
    if (d % m_heads != 0)
        throw ContractError("make_att_head: channels " + std::to_string(d) +
                            " not divisible by " + std::to_string(m_heads));
    const int dm = d / m_heads;
    const int n = levels * s;
    AttentionHeadParams hp;
    hp.s = s;
    hp.levels = levels;
    hp.value_w = reg.add(prefix + ".value_w", random_init({d, dm}, 1.0 / std::sqrt(d), rng));
    hp.value_b = reg.add(prefix + ".value_b", Tensor::zeros({dm}));
    hp.offset_w = reg.add(prefix + ".offset_w", Tensor::zeros({d, n * 2}));

    // Spread the initial sampling points of head m along direction 2*pi*m/M at
    // radii 0.5..s/2 pixels so heads start looking in distinct directions
    // while staying close enough to the anchor to read its local appearance.
    Tensor ob = Tensor::zeros({n * 2});
    {
        const double theta = 2.0 * std::numbers::pi * head_index / m_heads;
        auto& v = ob.mutable_values();
        int r = 0;
        for (int l = 0; l < levels; ++l)
            for (int si = 0; si < s; ++si, ++r) {
                v[static_cast<std::size_t>(r * 2)] = std::cos(theta) * 0.5 * (si + 1);
                v[static_cast<std::size_t>(r * 2 + 1)] = std::sin(theta) * 0.5 * (si + 1);
            }
    }
    hp.offset_b = reg.add(prefix + ".offset_b", ob);
    hp.weight_w = reg.add(prefix + ".weight_w", Tensor::zeros({d, n}));
    hp.weight_b = reg.add(prefix + ".weight_b", Tensor::zeros({n}));
    hp.out_w = reg.add(prefix + ".out_w", random_init({dm, d}, 1.0 / std::sqrt(dm), rng));
    return hp;
}

FgsaMinerParams make_fgsa_miner(ParamRegistry& reg, const std::string& prefix, int d, int m_heads,
                                int levels, int s, Rng& rng) {
    FgsaMinerParams mp;
    for (int m = 0; m < m_heads; ++m)
        mp.heads.push_back(
            make_att_head(reg, prefix + ".head" + std::to_string(m), d, m_heads, m, levels, s, rng));
    const int hidden = 2 * d;
    mp.ln_gamma = reg.add(prefix + ".ln_gamma", Tensor::full({d}, 1.0));
    mp.ln_beta = reg.add(prefix + ".ln_beta", Tensor::zeros({d}));
    mp.ffn_w1 = reg.add(prefix + ".ffn_w1", random_init({d, hidden}, 1.0 / std::sqrt(d), rng));
    mp.ffn_b1 = reg.add(prefix + ".ffn_b1", Tensor::zeros({hidden}));
    mp.ffn_w2 = reg.add(prefix + ".ffn_w2", Tensor::zeros({hidden, d}));
    mp.ffn_b2 = reg.add(prefix + ".ffn_b2", Tensor::zeros({d}));
    return mp;
}

}  // namespace posemine
