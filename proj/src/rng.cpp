#include "ict/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ict {

uint64_t Rng::index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u, v;
    do {
        u = real01();
    } while (u <= 0.0);
    v = real01();
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 2.0 * M_PI * v;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    // Partial Fisher-Yates over an index vector.
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + size_t(index(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

Rng Rng::split(std::string_view tag) const {
    return split(fnv1a(tag));
}

Rng Rng::split(uint64_t tag) const {
    uint64_t s = seed_;
    s ^= tag + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    // One splitmix round to decorrelate neighboring tags.
    s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ULL;
    s = (s ^ (s >> 27)) * 0x94d049bb133111ebULL;
    return Rng(s ^ (s >> 31));
}

uint64_t fnv1a(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ict
