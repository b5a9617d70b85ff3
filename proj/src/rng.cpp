#include "posemine/rng.hpp"

namespace posemine {

// splitmix64-style finalizer over the xor of both inputs; cheap, well mixed,
// and stable across platforms, which is all the stream-forking scheme needs.
uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace posemine
