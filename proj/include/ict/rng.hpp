#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ict {

// Deterministic RNG used everywhere. All randomness in the project flows
// from one master seed through named splits, so any component can be
// regenerated in isolation.
class Rng {
public:
    explicit Rng(uint64_t seed)
        : seed_(seed), state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Rejection sampling to avoid modulo bias.
    uint64_t index(uint64_t n);

    // Uniform in [0, 1).
    double real01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (own implementation so the stream
    // does not depend on libstdc++ internals).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Uniform k-subset of {0, ..., n-1}, in random order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

    // Derive an independent child stream from the construction seed and a tag.
    Rng split(std::string_view tag) const;
    Rng split(uint64_t tag) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stable 64-bit hash of a byte string (FNV-1a).
uint64_t fnv1a(std::string_view bytes);

}  // namespace ict
