#include "posemine/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace posemine {

namespace {

constexpr int kPaletteSize = 16;

// Hue to RGB at full saturation, value 1.
void hue_to_rgb(double h, double& r, double& g, double& b) {
    const double x = 1.0 - std::fabs(std::fmod(h * 6.0, 2.0) - 1.0);
    switch (static_cast<int>(h * 6.0) % 6) {
        case 0: r = 1; g = x; b = 0; break;
        case 1: r = x; g = 1; b = 0; break;
        case 2: r = 0; g = 1; b = x; break;
        case 3: r = 0; g = x; b = 1; break;
        case 4: r = x; g = 0; b = 1; break;
        default: r = 1; g = 0; b = x; break;
    }
}

Vec2 centroid(const std::vector<Vec2>& pts) {
    Vec2 c{0.0, 0.0};
    for (const Vec2& p : pts) {
        c[0] += p[0];
        c[1] += p[1];
    }
    c[0] /= static_cast<double>(pts.size());
    c[1] /= static_cast<double>(pts.size());
    return c;
}

// Spatial minimum spanning tree over the template points (Prim).
LinkMatrix spanning_tree(const std::vector<Vec2>& pts) {
    const int k = static_cast<int>(pts.size());
    LinkMatrix links(k);
    std::vector<char> in_tree(static_cast<std::size_t>(k), 0);
    std::vector<double> best(static_cast<std::size_t>(k), 1e18);
    std::vector<int> parent(static_cast<std::size_t>(k), -1);
    in_tree[0] = 1;
    auto relax = [&](int from) {
        for (int v = 0; v < k; ++v) {
            if (in_tree[static_cast<std::size_t>(v)]) continue;
            const double dx = pts[static_cast<std::size_t>(v)][0] - pts[static_cast<std::size_t>(from)][0];
            const double dy = pts[static_cast<std::size_t>(v)][1] - pts[static_cast<std::size_t>(from)][1];
            const double d = dx * dx + dy * dy;
            if (d < best[static_cast<std::size_t>(v)]) {
                best[static_cast<std::size_t>(v)] = d;
                parent[static_cast<std::size_t>(v)] = from;
            }
        }
    };
    relax(0);
    for (int added = 1; added < k; ++added) {
        int pick = -1;
        for (int v = 0; v < k; ++v)
            if (!in_tree[static_cast<std::size_t>(v)] &&
                (pick == -1 || best[static_cast<std::size_t>(v)] < best[static_cast<std::size_t>(pick)]))
                pick = v;
        in_tree[static_cast<std::size_t>(pick)] = 1;
        links.set(pick, parent[static_cast<std::size_t>(pick)], true);
        relax(pick);
    }
    return links;
}

}  // namespace

std::vector<Vec2> apply_transform(const std::vector<Vec2>& pts, const PoseTransform& t) {
    const Vec2 c = centroid(pts);
    const double cs = std::cos(t.rotation), sn = std::sin(t.rotation);
    std::vector<Vec2> out;
    out.reserve(pts.size());
    for (const Vec2& p : pts) {
        const double dx = (p[0] - c[0]) * t.scale;
        const double dy = (p[1] - c[1]) * t.scale;
        out.push_back({t.centroid_to[0] + cs * dx - sn * dy,
                       t.centroid_to[1] + sn * dx + cs * dy});
    }
    return out;
}

BlobStyle palette_style(int signature) {
    if (signature < 0 || signature >= kPaletteSize)
        throw ContractError("palette_style: signature " + std::to_string(signature) +
                            " outside palette");
    BlobStyle st{};
    hue_to_rgb(static_cast<double>(signature) / kPaletteSize, st.r, st.g, st.b);
    // Slightly desaturated so even pure-hue blobs differ from the line color.
    st.r = 0.1 + 0.9 * st.r;
    st.g = 0.1 + 0.9 * st.g;
    st.b = 0.1 + 0.9 * st.b;
    st.sigma = (signature % 2 == 0) ? 0.020 : 0.034;
    return st;
}

SyntheticClass generate_class(uint64_t seed, int class_id, int min_k, int max_k) {
    if (min_k < 2 || max_k < min_k) throw ContractError("generate_class: bad keypoint range");
    Rng rng(hash_mix(seed, 0x636c6173ULL));  // per-class stream
    SyntheticClass cls;
    cls.class_id = class_id;
    const int k = rng.uniform_int(min_k, max_k);

    // Rejection-sample template points with a minimum pairwise distance,
    // relaxing the distance when a point will not fit.
    double min_dist = 0.55 / std::sqrt(static_cast<double>(k));
    while (static_cast<int>(cls.template_coords.size()) < k) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const Vec2 cand{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
            bool ok = true;
            for (const Vec2& p : cls.template_coords) {
                const double dx = cand[0] - p[0], dy = cand[1] - p[1];
                if (dx * dx + dy * dy < min_dist * min_dist) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                cls.template_coords.push_back(cand);
                placed = true;
            }
        }
        if (!placed) min_dist *= 0.9;
    }

    cls.links = spanning_tree(cls.template_coords);
    if (k >= 4 && rng.uniform() < 0.35) {
        // One extra non-tree edge keeps some classes near-trees rather than trees.
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int a = rng.uniform_int(0, k - 1);
            const int b = rng.uniform_int(0, k - 1);
            if (a != b && !cls.links.at(a, b)) {
                cls.links.set(a, b, true);
                break;
            }
        }
    }

    std::vector<int> palette(kPaletteSize);
    for (int i = 0; i < kPaletteSize; ++i) palette[static_cast<std::size_t>(i)] = i;
    for (int i = kPaletteSize - 1; i > 0; --i)
        std::swap(palette[static_cast<std::size_t>(i)],
                  palette[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    cls.signature.assign(palette.begin(), palette.begin() + k);
    return cls;
}

Instance render_with(const SyntheticClass& cls, const PoseTransform& t, double jitter_sigma,
                     Rng& rng, int image_size) {
    if (image_size < 32) throw ContractError("render_with: image_size below 32");
    const int s = image_size;
    Instance inst;
    inst.class_id = cls.class_id;

    std::vector<Vec2> pts = apply_transform(cls.template_coords, t);
    for (Vec2& p : pts) {
        p[0] += rng.normal(0.0, jitter_sigma);
        p[1] += rng.normal(0.0, jitter_sigma);
    }

    inst.image = Tensor::full({s, s, 3}, 0.0);
    auto& img = inst.image.mutable_values();
    for (int v = 0; v < s; ++v)
        for (int u = 0; u < s; ++u) {
            img[static_cast<std::size_t>((v * s + u) * 3 + 0)] = 0.04;
            img[static_cast<std::size_t>((v * s + u) * 3 + 1)] = 0.04;
            img[static_cast<std::size_t>((v * s + u) * 3 + 2)] = 0.07;
        }

    auto blend = [&](int u, int v, double alpha, double r, double g, double b) {
        if (u < 0 || u >= s || v < 0 || v >= s) return;
        double* px = img.data() + (v * s + u) * 3;
        px[0] += alpha * (r - px[0]);
        px[1] += alpha * (g - px[1]);
        px[2] += alpha * (b - px[2]);
    };

    // Faint gray skeleton lines, anti-aliased by distance to the segment.
    const double line_halfwidth = 0.8;
    for (const auto& [a, b] : cls.links.edges()) {
        const Vec2 pa{pts[static_cast<std::size_t>(a)][0] * s, pts[static_cast<std::size_t>(a)][1] * s};
        const Vec2 pb{pts[static_cast<std::size_t>(b)][0] * s, pts[static_cast<std::size_t>(b)][1] * s};
        const int u0 = static_cast<int>(std::floor(std::min(pa[0], pb[0]) - 2));
        const int u1 = static_cast<int>(std::ceil(std::max(pa[0], pb[0]) + 2));
        const int v0 = static_cast<int>(std::floor(std::min(pa[1], pb[1]) - 2));
        const int v1 = static_cast<int>(std::ceil(std::max(pa[1], pb[1]) + 2));
        const double ex = pb[0] - pa[0], ey = pb[1] - pa[1];
        const double len2 = std::max(ex * ex + ey * ey, 1e-12);
        for (int v = v0; v <= v1; ++v)
            for (int u = u0; u <= u1; ++u) {
                const double px = u + 0.5, py = v + 0.5;
                const double tt = std::clamp(((px - pa[0]) * ex + (py - pa[1]) * ey) / len2, 0.0, 1.0);
                const double dx = px - (pa[0] + tt * ex), dy = py - (pa[1] + tt * ey);
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d < line_halfwidth + 1.0)
                    blend(u, v, 0.35 * std::clamp(line_halfwidth + 1.0 - d, 0.0, 1.0), 0.30, 0.30, 0.30);
            }
    }

    // Gaussian blobs, one per keypoint, drawn at the exact (pre-clamp) point.
    for (int k = 0; k < cls.keypoint_count(); ++k) {
        const BlobStyle st = palette_style(cls.signature[static_cast<std::size_t>(k)]);
        const double sigma_px = st.sigma * s;
        const double cx = pts[static_cast<std::size_t>(k)][0] * s;
        const double cy = pts[static_cast<std::size_t>(k)][1] * s;
        const int reach = static_cast<int>(std::ceil(3.0 * sigma_px));
        for (int v = static_cast<int>(cy) - reach; v <= static_cast<int>(cy) + reach; ++v)
            for (int u = static_cast<int>(cx) - reach; u <= static_cast<int>(cx) + reach; ++u) {
                const double dx = u + 0.5 - cx, dy = v + 0.5 - cy;
                const double alpha = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_px * sigma_px));
                blend(u, v, alpha, st.r, st.g, st.b);
            }
    }

    inst.keypoints.raw_count = cls.keypoint_count();
    for (const Vec2& p : pts) {
        const bool inside = p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0;
        inst.keypoints.coords.push_back({std::clamp(p[0], 0.0, 1.0), std::clamp(p[1], 0.0, 1.0)});
        inst.keypoints.weight.push_back(inside ? 1.0 : 0.0);
    }
    return inst;
}

Instance render_instance(const SyntheticClass& cls, Rng& rng, int image_size) {
    PoseTransform t;
    t.scale = rng.uniform(0.6, 1.1);
    t.rotation = rng.uniform(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
    t.centroid_to = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)};
    return render_with(cls, t, 0.008, rng, image_size);
}

Instance SyntheticDataset::instance(int class_index, int instance_index) const {
    if (class_index < 0 || class_index >= static_cast<int>(classes.size()))
        throw ContractError("SyntheticDataset: class index out of range");
    if (instance_index < 0 || instance_index >= instances_per_class)
        throw ContractError("SyntheticDataset: instance index out of range");
    Rng rng(hash_mix(hash_mix(seed, static_cast<uint64_t>(classes[static_cast<std::size_t>(class_index)].class_id)),
                     static_cast<uint64_t>(instance_index) + 0x696e7374ULL));
    return render_instance(classes[static_cast<std::size_t>(class_index)], rng, image_size);
}

int SyntheticDataset::max_keypoint_count() const {
    int mx = 0;
    for (const SyntheticClass& c : classes) mx = std::max(mx, c.keypoint_count());
    return mx;
}

SyntheticDataset make_dataset(uint64_t seed, int class_count, int instances_per_class,
                              int image_size, int min_k, int max_k) {
    SyntheticDataset ds;
    ds.seed = seed;
    ds.instances_per_class = instances_per_class;
    ds.image_size = image_size;
    for (int c = 0; c < class_count; ++c)
        ds.classes.push_back(
            generate_class(hash_mix(seed, static_cast<uint64_t>(c) + 1), c, min_k, max_k));
    return ds;
}

}  // namespace posemine
