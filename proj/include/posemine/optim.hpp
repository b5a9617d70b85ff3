#pragma once

#include <string>
#include <utility>
#include <vector>

#include "posemine/tensor.hpp"

namespace posemine {

// Named, ordered collection of trainable tensors. Registration order defines
// optimizer-state slots, checkpoint layout, and flatten()/unflatten() layout,
// so it must be stable across runs.
class ParamRegistry {
  public:
    // Registers and marks the tensor as requiring gradients.
    Tensor add(const std::string& name, Tensor t);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    Tensor* find(const std::string& name);
    std::size_t count() const { return entries_.size(); }
    std::size_t total_elements() const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    void zero_grads();

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers aligned with registry order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

// Bias-corrected Adam update over every registered parameter. Parameters
// without an accumulated gradient are treated as zero-gradient.
void adam_step(ParamRegistry& params, AdamState& state, const AdamConfig& cfg);

// Binary checkpoint: magic + version, a manifest of (name, shape) entries,
// then row-major 64-bit little-endian payloads in manifest order.
void save_checkpoint(const std::string& path, const ParamRegistry& params);
// Loads into an already-built registry; names and shapes must match exactly.
void load_checkpoint(const std::string& path, ParamRegistry& params);

}  // namespace posemine
