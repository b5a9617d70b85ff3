#include "posemine/optim.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "posemine/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace posemine {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (find(name)) throw ContractError("ParamRegistry: duplicate name " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, t);
    return t;
}

Tensor* ParamRegistry::find(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return &t;
    return nullptr;
}

std::size_t ParamRegistry::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

std::vector<double> ParamRegistry::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_elements());
    for (const auto& [name, t] : entries_)
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
}

void ParamRegistry::unflatten(const std::vector<double>& flat) {
    if (flat.size() != total_elements())
        throw ContractError("unflatten: got " + std::to_string(flat.size()) + " values, need " +
                            std::to_string(total_elements()));
    std::size_t off = 0;
    for (auto& [name, t] : entries_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.numel(),
                    t.mutable_values().begin());
        off += t.numel();
    }
}

void ParamRegistry::zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

void adam_step(ParamRegistry& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.count());
        state.v.resize(params.count());
        for (std::size_t i = 0; i < params.count(); ++i) {
            state.m[i].assign(params.entries()[i].second.numel(), 0.0);
            state.v[i].assign(params.entries()[i].second.numel(), 0.0);
        }
    }
    if (state.m.size() != params.count())
        throw ContractError("adam_step: state/registry slot count mismatch");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.count(); ++i) {
        Tensor& t = const_cast<Tensor&>(params.entries()[i].second);
        auto& w = t.mutable_values();
        if (state.m[i].size() != w.size())
            throw ContractError("adam_step: moment shape mismatch for " + params.entries()[i].first);
        const bool has_g = t.has_grad();
        const std::vector<double>* g = has_g ? &t.grad() : nullptr;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g ? (*g)[j] : 0.0;
            state.m[i][j] = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * gj;
            state.v[i][j] = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * gj * gj;
            const double mhat = state.m[i][j] / bc1;
            const double vhat = state.v[i][j] / bc2;
            w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---- checkpoint --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, static_cast<uint32_t>(params.count()));
    for (const auto& [name, t] : params.entries()) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d) write_u32(os, static_cast<uint32_t>(t.dim(d)));
    }
    for (const auto& [name, t] : params.entries())
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ParamRegistry& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const uint32_t count = read_u32(is);
    if (count != params.count())
        throw std::runtime_error("load_checkpoint: file has " + std::to_string(count) +
                                 " tensors, registry has " + std::to_string(params.count()));
    std::vector<Shape> shapes(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t ndim = read_u32(is);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(is));
        const auto& [expect_name, expect_t] = params.entries()[i];
        if (name != expect_name)
            throw std::runtime_error("load_checkpoint: tensor " + std::to_string(i) + " is '" +
                                     name + "', registry expects '" + expect_name + "'");
        if (shape != expect_t.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name + ": file " +
                                     shape_str(shape) + ", registry " + shape_str(expect_t.shape()));
        shapes[i] = std::move(shape);
    }
    for (uint32_t i = 0; i < count; ++i) {
        Tensor& t = const_cast<Tensor&>(params.entries()[i].second);
        is.read(reinterpret_cast<char*>(t.mutable_values().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
}

}  // namespace posemine
