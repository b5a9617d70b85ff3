#include "posemine/oracles.hpp"

#include <cmath>

namespace posemine {

namespace {

// y = x^T W + b over flat arrays; W is {in, out} row-major.
std::vector<double> mat_vec(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
    const int in = w.dim(0), out = w.dim(1);
    std::vector<double> y(static_cast<std::size_t>(out), 0.0);
    for (int j = 0; j < out; ++j) {
        double s = b.defined() ? b.at(static_cast<std::size_t>(j)) : 0.0;
        for (int i = 0; i < in; ++i) s += x[static_cast<std::size_t>(i)] * w.at(static_cast<std::size_t>(i * out + j));
        y[static_cast<std::size_t>(j)] = s;
    }
    return y;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

std::vector<double> oracle_bilinear(const Tensor& map, double x, double y) {
    const int h = map.dim(0), w = map.dim(1), d = map.dim(2);
    const double px = x * w - 0.5, py = y * h - 0.5;
    const int u0 = static_cast<int>(std::floor(px)), v0 = static_cast<int>(std::floor(py));
    const double dx = px - std::floor(px), dy = py - std::floor(py);
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    const double weights[4] = {(1 - dx) * (1 - dy), dx * (1 - dy), (1 - dx) * dy, dx * dy};
    const int us[4] = {u0, u0 + 1, u0, u0 + 1};
    const int vs[4] = {v0, v0, v0 + 1, v0 + 1};
    for (int c = 0; c < 4; ++c) {
        if (us[c] < 0 || us[c] >= w || vs[c] < 0 || vs[c] >= h) continue;
        for (int ch = 0; ch < d; ++ch)
            out[static_cast<std::size_t>(ch)] +=
                weights[c] * map.at(static_cast<std::size_t>((vs[c] * w + us[c]) * d + ch));
    }
    return out;
}

std::vector<double> oracle_att_head(const Tensor& f, const FeaturePyramid& pyr, Vec2 p,
                                    const AttentionHeadParams& hp) {
    const int n = hp.levels * hp.s;
    const int dm = hp.value_w.dim(1);
    const std::vector<double> fv = f.values();

    const std::vector<double> off = mat_vec(fv, hp.offset_w, hp.offset_b);
    const std::vector<double> logits = mat_vec(fv, hp.weight_w, hp.weight_b);

    std::vector<double> aw(static_cast<std::size_t>(n));
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (int r = 0; r < n; ++r) {
        aw[static_cast<std::size_t>(r)] = std::exp(logits[static_cast<std::size_t>(r)] - mx);
        z += aw[static_cast<std::size_t>(r)];
    }
    for (double& v : aw) v /= z;

    std::vector<double> out(static_cast<std::size_t>(dm), 0.0);
    for (int l = 0; l < hp.levels; ++l) {
        const Tensor& map = pyr.levels[static_cast<std::size_t>(l)];
        for (int s = 0; s < hp.s; ++s) {
            const int r = l * hp.s + s;
            const double lx = p[0] + off[static_cast<std::size_t>(r * 2)] / map.dim(1);
            const double ly = p[1] + off[static_cast<std::size_t>(r * 2 + 1)] / map.dim(0);
            const std::vector<double> sample = oracle_bilinear(map, lx, ly);
            const std::vector<double> vproj = mat_vec(sample, hp.value_w, hp.value_b);
            for (int c = 0; c < dm; ++c)
                out[static_cast<std::size_t>(c)] += aw[static_cast<std::size_t>(r)] * vproj[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

std::vector<double> oracle_fgsa_mine(const Tensor& F, const FeaturePyramid& pyr, const Tensor& P,
                                     const LinkMatrix& links, const FgsaMinerParams& params,
                                     bool identical_refs) {
    const int k_count = F.dim(0), d = F.dim(1);
    const int m_heads = params.head_count();

    std::vector<double> mined(static_cast<std::size_t>(k_count) * static_cast<std::size_t>(d));
    for (int k = 0; k < k_count; ++k) {
        std::vector<double> fk(static_cast<std::size_t>(d));
        for (int c = 0; c < d; ++c) fk[static_cast<std::size_t>(c)] = F.at(static_cast<std::size_t>(k * d + c));
        Tensor fkt = Tensor::from(fk, {d});

        std::vector<double> acc = fk;
        const std::vector<int> refs = identical_refs
                                          ? std::vector<int>(static_cast<std::size_t>(m_heads), k)
                                          : bfs_reference_indices(links, k, m_heads);
        for (int m = 0; m < m_heads; ++m) {
            const int ri = refs[static_cast<std::size_t>(m)];
            const Vec2 pm{P.at(static_cast<std::size_t>(ri * 2)), P.at(static_cast<std::size_t>(ri * 2 + 1))};
            const std::vector<double> head =
                oracle_att_head(fkt, pyr, pm, params.heads[static_cast<std::size_t>(m)]);
            const std::vector<double> mixed =
                mat_vec(head, params.heads[static_cast<std::size_t>(m)].out_w, Tensor{});
            for (int c = 0; c < d; ++c) acc[static_cast<std::size_t>(c)] += mixed[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < d; ++c) mined[static_cast<std::size_t>(k * d + c)] = acc[static_cast<std::size_t>(c)];
    }

    // Pre-norm feed-forward residual, recomputed with scalar loops.
    std::vector<double> out = mined;
    for (int k = 0; k < k_count; ++k) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += mined[static_cast<std::size_t>(k * d + c)];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dv = mined[static_cast<std::size_t>(k * d + c)] - mean;
            var += dv * dv;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        std::vector<double> normed(static_cast<std::size_t>(d));
        for (int c = 0; c < d; ++c)
            normed[static_cast<std::size_t>(c)] =
                (mined[static_cast<std::size_t>(k * d + c)] - mean) * inv * params.ln_gamma.at(static_cast<std::size_t>(c)) +
                params.ln_beta.at(static_cast<std::size_t>(c));
        std::vector<double> hidden = mat_vec(normed, params.ffn_w1, params.ffn_b1);
        for (double& v : hidden) v = gelu_ref(v);
        const std::vector<double> delta = mat_vec(hidden, params.ffn_w2, params.ffn_b2);
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(k * d + c)] += delta[static_cast<std::size_t>(c)];
    }
    return out;
}

}  // namespace posemine
