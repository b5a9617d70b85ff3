#pragma once

#include <cstdint>
#include <random>

namespace posemine {

uint64_t hash_mix(uint64_t a, uint64_t b);

// Seeded random source. Every stochastic operation in the project draws from
// an explicit Rng handle so runs are reproducible end to end.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }

    double gamma(double shape) {
        return std::gamma_distribution<double>(shape, 1.0)(gen_);
    }

    // Beta(a, b) via the ratio of two gamma draws.
    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        const double s = x + y;
        if (s <= 0.0) return 0.5;
        return x / s;
    }

    // Derive an independent child stream; children with distinct tags never
    // collide with the parent sequence.
    Rng fork(uint64_t tag) { return Rng(hash_mix(gen_(), tag)); }

  private:
    std::mt19937_64 gen_;
};

}  // namespace posemine
